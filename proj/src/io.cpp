#include "dyn4d/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include <Eigen/Geometry>

#include "dyn4d/error.hpp"

namespace dyn4d {

namespace {

[[noreturn]] void parse_fail(const std::string& source, std::size_t line, const std::string& what) {
  throw Error(ErrorCode::ParseError, source + ":" + std::to_string(line) + ": " + what);
}

std::ifstream open_input(const std::filesystem::path& path, bool binary) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return in;
}

bool parse_double(const std::string& token, double& out) {
  std::istringstream s(token);
  s.imbue(std::locale::classic());
  s >> out;
  return s && s.peek() == std::char_traits<char>::eof();
}

std::vector<std::string> split(const std::string& line) {
  std::istringstream s(line);
  std::vector<std::string> tokens;
  std::string t;
  while (s >> t) tokens.push_back(t);
  return tokens;
}

bool skippable(const std::string& line) {
  const auto first = line.find_first_not_of(" \t\r");
  return first == std::string::npos || line[first] == '#';
}

}  // namespace

// --- trajectories ------------------------------------------------------------

Trajectory read_trajectory(std::istream& in, const std::string& source) {
  Trajectory t;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (skippable(line)) continue;
    const auto tokens = split(line);
    if (tokens.size() != 8) {
      parse_fail(source, line_no, "expected 8 fields, found " + std::to_string(tokens.size()));
    }
    double v[8];
    for (std::size_t i = 0; i < 8; ++i) {
      if (!parse_double(tokens[i], v[i]) || !std::isfinite(v[i])) {
        parse_fail(source, line_no, "not a finite number: '" + tokens[i] + "'");
      }
    }
    Eigen::Quaterniond q(v[7], v[4], v[5], v[6]);
    if (!(q.norm() > 1e-12)) parse_fail(source, line_no, "zero quaternion");
    q.normalize();
    if (!t.timestamps.empty() && !(v[0] > t.timestamps.back())) {
      parse_fail(source, line_no, "timestamps must increase");
    }
    t.timestamps.push_back(v[0]);
    t.poses.emplace_back(q.toRotationMatrix(), Vec3(v[1], v[2], v[3]));
  }
  return t;
}

Trajectory read_trajectory_file(const std::filesystem::path& path) {
  auto in = open_input(path, false);
  return read_trajectory(in, path.string());
}

void write_trajectory(std::ostream& out, const Trajectory& trajectory) {
  trajectory.validate();
  const auto flags = out.flags();
  const auto precision = out.precision();
  out << std::setprecision(17);
  for (std::size_t i = 0; i < trajectory.size(); ++i) {
    const PoseSE3& p = trajectory.poses[i];
    const Eigen::Quaterniond q(p.rotation);
    out << trajectory.timestamps[i] << ' ' << p.translation.x() << ' ' << p.translation.y() << ' '
        << p.translation.z() << ' ' << q.x() << ' ' << q.y() << ' ' << q.z() << ' ' << q.w() << '\n';
  }
  out.flags(flags);
  out.precision(precision);
}

std::pair<Trajectory, Trajectory> associate(const Trajectory& pred, const Trajectory& gt, double tolerance) {
  struct Candidate {
    double dt;
    std::size_t p;
    std::size_t g;
  };
  std::vector<Candidate> candidates;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double t = pred.timestamps[i];
    const auto it = std::lower_bound(gt.timestamps.begin(), gt.timestamps.end(), t);
    const auto hi = static_cast<std::size_t>(it - gt.timestamps.begin());
    // Both neighbours may be in range; keep both so the greedy pass can
    // fall back when the closer one is taken.
    for (std::size_t g : {hi == 0 ? hi : hi - 1, hi}) {
      if (g < gt.size() && std::abs(gt.timestamps[g] - t) <= tolerance) {
        candidates.push_back({std::abs(gt.timestamps[g] - t), i, g});
      }
    }
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Candidate& a, const Candidate& b) { return a.dt < b.dt; });
  std::vector<bool> used_p(pred.size(), false);
  std::vector<bool> used_g(gt.size(), false);
  std::vector<std::pair<std::size_t, std::size_t>> matches;
  for (const auto& c : candidates) {
    if (used_p[c.p] || used_g[c.g]) continue;
    used_p[c.p] = true;
    used_g[c.g] = true;
    matches.emplace_back(c.p, c.g);
  }
  if (matches.size() < 3) {
    throw Error(ErrorCode::AssociationFailure,
                "only " + std::to_string(matches.size()) + " timestamp matches within tolerance");
  }
  std::sort(matches.begin(), matches.end());
  std::pair<Trajectory, Trajectory> out;
  for (const auto& [p, g] : matches) {
    out.first.timestamps.push_back(pred.timestamps[p]);
    out.first.poses.push_back(pred.poses[p]);
    out.second.timestamps.push_back(gt.timestamps[g]);
    out.second.poses.push_back(gt.poses[g]);
  }
  // Pred timestamps increase; nearest-neighbour matches keep gt order except
  // in pathological interleavings, which validation reports.
  out.second.validate();
  return out;
}

// --- PFM ---------------------------------------------------------------------

namespace {

std::string read_token(std::istream& in, const std::string& source) {
  std::string token;
  char c = 0;
  while (in.get(c) && std::isspace(static_cast<unsigned char>(c))) {
  }
  if (!in) parse_fail(source, 0, "truncated header");
  token.push_back(c);
  while (in.get(c) && !std::isspace(static_cast<unsigned char>(c))) token.push_back(c);
  return token;
}

}  // namespace

DepthMap read_pfm(std::istream& in, const std::string& source) {
  const std::string magic = read_token(in, source);
  if (magic == "PF") parse_fail(source, 1, "colour PFM is not supported");
  if (magic != "Pf") parse_fail(source, 1, "not a grayscale PFM file");
  double w = 0.0;
  double h = 0.0;
  double scale = 0.0;
  if (!parse_double(read_token(in, source), w) || !parse_double(read_token(in, source), h) || w < 1 || h < 1 ||
      w != std::floor(w) || h != std::floor(h) || w * h > 1e9) {
    parse_fail(source, 2, "bad dimensions");
  }
  // The scale token is followed by exactly one whitespace byte, already consumed.
  if (!parse_double(read_token(in, source), scale) || scale == 0.0) parse_fail(source, 3, "bad scale");
  const bool little = scale < 0.0;
  DepthMap map(static_cast<int>(w), static_cast<int>(h));
  std::vector<unsigned char> row(static_cast<std::size_t>(map.width) * 4);
  for (int y = map.height - 1; y >= 0; --y) {
    in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
    if (in.gcount() != static_cast<std::streamsize>(row.size())) {
      throw Error(ErrorCode::ParseError, source + ": truncated pixel data");
    }
    for (int x = 0; x < map.width; ++x) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) {
        const std::uint32_t byte = row[static_cast<std::size_t>(x) * 4 + static_cast<std::size_t>(b)];
        bits |= little ? byte << (8 * b) : byte << (8 * (3 - b));
      }
      map.at(x, y) = static_cast<double>(std::bit_cast<float>(bits));
    }
  }
  return map;
}

DepthMap read_pfm_file(const std::filesystem::path& path) {
  auto in = open_input(path, true);
  return read_pfm(in, path.string());
}

void write_pfm(std::ostream& out, const DepthMap& map) {
  if (map.width < 1 || map.height < 1 || map.size() != static_cast<std::size_t>(map.width) * map.height) {
    throw Error(ErrorCode::ShapeMismatch, "depth map shape is inconsistent");
  }
  out << "Pf\n" << map.width << ' ' << map.height << "\n-1.0\n";
  std::vector<char> row(static_cast<std::size_t>(map.width) * 4);
  for (int y = map.height - 1; y >= 0; --y) {
    for (int x = 0; x < map.width; ++x) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(map.at(x, y)));
      for (int b = 0; b < 4; ++b) {
        row[static_cast<std::size_t>(x) * 4 + static_cast<std::size_t>(b)] = static_cast<char>((bits >> (8 * b)) & 0xffU);
      }
    }
    out.write(row.data(), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw Error(ErrorCode::IoError, "failed to write PFM data");
}

void write_pfm_file(const std::filesystem::path& path, const DepthMap& map) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  write_pfm(out, map);
}

ValidMask positive_mask(const DepthMap& map) {
  ValidMask mask(map.size());
  for (std::size_t i = 0; i < map.size(); ++i) mask[i] = std::isfinite(map.values[i]) && map.values[i] > 0.0;
  return mask;
}

// --- PLY ---------------------------------------------------------------------

std::vector<Vec3> read_ply(std::istream& in, const std::string& source) {
  struct Element {
    std::string name;
    std::size_t count{0};
    std::vector<std::string> properties;
  };
  std::string line;
  std::size_t line_no = 0;
  auto next_line = [&]() {
    if (!std::getline(in, line)) parse_fail(source, line_no, "unexpected end of file");
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
  };
  next_line();
  if (line != "ply") parse_fail(source, line_no, "missing 'ply' magic");
  std::vector<Element> elements;
  bool ascii = false;
  while (true) {
    next_line();
    const auto tokens = split(line);
    if (tokens.empty()) continue;
    if (tokens[0] == "end_header") break;
    if (tokens[0] == "comment" || tokens[0] == "obj_info") continue;
    if (tokens[0] == "format") {
      if (tokens.size() < 2 || tokens[1] != "ascii") parse_fail(source, line_no, "only ascii PLY is supported");
      ascii = true;
    } else if (tokens[0] == "element") {
      double n = 0.0;
      if (tokens.size() != 3 || !parse_double(tokens[2], n) || n < 0 || n != std::floor(n)) {
        parse_fail(source, line_no, "bad element declaration");
      }
      elements.push_back({tokens[1], static_cast<std::size_t>(n), {}});
    } else if (tokens[0] == "property") {
      if (elements.empty() || tokens.size() < 3) parse_fail(source, line_no, "property outside an element");
      // List properties ("property list uchar int vertex_indices") occupy a
      // variable number of fields; they are only allowed outside the vertex element.
      elements.back().properties.push_back(tokens[1] == "list" ? "" : tokens.back());
    } else {
      parse_fail(source, line_no, "unknown header keyword '" + tokens[0] + "'");
    }
  }
  if (!ascii) parse_fail(source, line_no, "missing format line");
  std::vector<Vec3> points;
  bool seen_vertex = false;
  for (const Element& e : elements) {
    if (e.name != "vertex") {
      for (std::size_t i = 0; i < e.count; ++i) next_line();
      continue;
    }
    seen_vertex = true;
    std::array<int, 3> column{-1, -1, -1};
    for (std::size_t p = 0; p < e.properties.size(); ++p) {
      if (e.properties[p].empty()) parse_fail(source, line_no, "list property in vertex element");
      for (int axis = 0; axis < 3; ++axis) {
        if (e.properties[p] == std::string(1, static_cast<char>('x' + axis))) column[static_cast<std::size_t>(axis)] = static_cast<int>(p);
      }
    }
    if (std::find(column.begin(), column.end(), -1) != column.end()) {
      parse_fail(source, line_no, "vertex element lacks x, y or z");
    }
    points.reserve(e.count);
    for (std::size_t i = 0; i < e.count; ++i) {
      next_line();
      const auto tokens = split(line);
      if (tokens.size() != e.properties.size()) {
        parse_fail(source, line_no, "expected " + std::to_string(e.properties.size()) + " values");
      }
      Vec3 v;
      for (int axis = 0; axis < 3; ++axis) {
        const auto& token = tokens[static_cast<std::size_t>(column[static_cast<std::size_t>(axis)])];
        if (!parse_double(token, v(axis)) || !std::isfinite(v(axis))) {
          parse_fail(source, line_no, "not a finite number: '" + token + "'");
        }
      }
      points.push_back(v);
    }
  }
  if (!seen_vertex) parse_fail(source, line_no, "no vertex element");
  return points;
}

std::vector<Vec3> read_ply_file(const std::filesystem::path& path) {
  auto in = open_input(path, false);
  return read_ply(in, path.string());
}

void write_ply(std::ostream& out, const std::vector<Vec3>& points) {
  const auto precision = out.precision();
  out << "ply\nformat ascii 1.0\nelement vertex " << points.size()
      << "\nproperty double x\nproperty double y\nproperty double z\nend_header\n";
  out << std::setprecision(17);
  for (const Vec3& p : points) out << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
  out.precision(precision);
}

}  // namespace dyn4d
