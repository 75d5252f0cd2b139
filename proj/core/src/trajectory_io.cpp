#include "corrtrack/trajectory_io.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "corrtrack/errors.hpp"

namespace corrtrack {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return std::string(buf);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string tok;
  while (std::getline(ss, tok, ',')) fields.push_back(tok);
  if (!line.empty() && line.back() == ',') fields.push_back("");
  return fields;
}

}  // namespace

void write_trajectory_csv(const std::filesystem::path& path,
                          const std::vector<Trajectory>& trajectories) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write trajectory csv: " + path.string());
  f << "query_id,frame,x,y,z,visible_prob,valid\n";
  for (const auto& tr : trajectories) {
    for (size_t t = 0; t < tr.points.size(); ++t) {
      const TrajectoryPoint& pt = tr.points[t];
      f << tr.query.id << ',' << t << ',';
      if (!pt.valid) {
        // Invalid entries keep the query pixel so rows stay parseable.
        f << fmt(tr.query.pixel.x()) << ',' << fmt(tr.query.pixel.y()) << ",,0,0\n";
        continue;
      }
      if (pt.has_point3d) {
        // 3D runs export the point in the query camera frame (scene units).
        f << fmt(pt.point3d.x()) << ',' << fmt(pt.point3d.y()) << ',' << fmt(pt.point3d.z());
      } else {
        // 2D runs export the tracked pixel at inference resolution.
        f << fmt(pt.pixel.x()) << ',' << fmt(pt.pixel.y()) << ',';
      }
      f << ',' << fmt(pt.visible_prob) << ",1\n";
    }
  }
  if (!f) throw IoError("trajectory csv write failed: " + path.string());
}

std::vector<Trajectory> read_trajectory_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open trajectory csv: " + path.string());
  std::string line;
  if (!std::getline(f, line)) throw FormatError("empty trajectory csv: " + path.string());
  if (line != "query_id,frame,x,y,z,visible_prob,valid") {
    throw FormatError("unexpected trajectory csv header: " + line);
  }
  struct Row {
    int64_t frame;
    TrajectoryPoint pt;
  };
  std::map<int, std::vector<Row>> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_csv_line(line);
    if (fields.size() != 7) throw FormatError("bad trajectory csv row: " + line);
    Row r;
    const int id = std::stoi(fields[0]);
    r.frame = std::stoll(fields[1]);
    const double x = std::stod(fields[2]);
    const double y = std::stod(fields[3]);
    if (!fields[4].empty()) {
      r.pt.has_point3d = true;
      r.pt.point3d = Eigen::Vector3d(x, y, std::stod(fields[4]));
    } else {
      r.pt.pixel = Eigen::Vector2d(x, y);
    }
    r.pt.visible_prob = std::stod(fields[5]);
    r.pt.valid = std::stoi(fields[6]) != 0;
    rows[id].push_back(r);
  }

  std::vector<Trajectory> out;
  for (auto& [id, rs] : rows) {
    Trajectory tr;
    tr.query.id = id;
    int64_t num_frames = 0;
    for (const auto& r : rs) num_frames = std::max(num_frames, r.frame + 1);
    tr.points.resize(static_cast<size_t>(num_frames));
    for (const auto& r : rs) tr.points[static_cast<size_t>(r.frame)] = r.pt;
    bool found = false;
    for (size_t t = 0; t < tr.points.size(); ++t) {
      if (tr.points[t].valid) {
        tr.query.frame = static_cast<int>(t);
        tr.query.pixel = tr.points[t].pixel;
        found = true;
        break;
      }
    }
    if (!found) throw FormatError("trajectory with no valid entry for query " + std::to_string(id));
    out.push_back(std::move(tr));
  }
  return out;
}

void write_queries_csv(const std::filesystem::path& path, const std::vector<TrackQuery>& queries) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write queries csv: " + path.string());
  f << "query_id,frame,x,y\n";
  for (const auto& q : queries) {
    f << q.id << ',' << q.frame << ',' << fmt(q.pixel.x()) << ',' << fmt(q.pixel.y()) << '\n';
  }
}

std::vector<TrackQuery> read_queries_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open queries csv: " + path.string());
  std::string line;
  if (!std::getline(f, line) || line != "query_id,frame,x,y") {
    throw FormatError("unexpected queries csv header");
  }
  std::vector<TrackQuery> out;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_csv_line(line);
    if (fields.size() != 4) throw FormatError("bad queries csv row: " + line);
    TrackQuery q;
    q.id = std::stoi(fields[0]);
    q.frame = std::stoi(fields[1]);
    q.pixel = Eigen::Vector2d(std::stod(fields[2]), std::stod(fields[3]));
    out.push_back(q);
  }
  return out;
}

}  // namespace corrtrack
