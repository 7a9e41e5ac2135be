#pragma once

// Readers and writers for the exchange formats: plain-text trajectories
// ("timestamp tx ty tz qx qy qz qw"), grayscale PFM depth maps and ASCII PLY
// point clouds. Parse failures throw ParseError with "<source>:<line>: ..."
// where a line is meaningful.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "dyn4d/metrics.hpp"

namespace dyn4d {

// '#' lines and blank lines are skipped. The quaternion is normalized; a zero
// quaternion, a wrong field count, a non-numeric field or a timestamp that
// does not increase is a ParseError.
[[nodiscard]] Trajectory read_trajectory(std::istream& in, const std::string& source = "<stream>");
[[nodiscard]] Trajectory read_trajectory_file(const std::filesystem::path& path);
void write_trajectory(std::ostream& out, const Trajectory& trajectory);

// Pairs each pred timestamp with the nearest unused gt timestamp within
// `tolerance` seconds, closest pairs first. Returned trajectories are in
// timestamp order. Throws AssociationFailure with fewer than 3 matches.
[[nodiscard]] std::pair<Trajectory, Trajectory> associate(const Trajectory& pred, const Trajectory& gt,
                                                          double tolerance = 0.02);

// "Pf" header only (grayscale). Negative scale means little-endian; rows are
// stored bottom-up. Values are float32 on disk.
[[nodiscard]] DepthMap read_pfm(std::istream& in, const std::string& source = "<stream>");
[[nodiscard]] DepthMap read_pfm_file(const std::filesystem::path& path);
void write_pfm(std::ostream& out, const DepthMap& map);
void write_pfm_file(const std::filesystem::path& path, const DepthMap& map);

// Pixels holding a finite value > 0; the format marks invalid pixels with <= 0.
[[nodiscard]] ValidMask positive_mask(const DepthMap& map);

// ASCII PLY; reads the x, y, z properties of the vertex element, whatever
// their numeric type, and skips every other property and element.
[[nodiscard]] std::vector<Vec3> read_ply(std::istream& in, const std::string& source = "<stream>");
[[nodiscard]] std::vector<Vec3> read_ply_file(const std::filesystem::path& path);
void write_ply(std::ostream& out, const std::vector<Vec3>& points);

}  // namespace dyn4d
