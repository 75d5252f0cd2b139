#pragma once

#include <filesystem>
#include <vector>

#include "corrtrack/tracker.hpp"

namespace corrtrack {

// Trajectory CSV: header `query_id,frame,x,y,z,visible_prob,valid`, one row
// per (query, frame), frames ascending within a query. The z field is empty
// for 2D runs and for entries without a 3D point. Coordinates are pixels at
// inference resolution. Reading reconstructs the query as the first valid
// row of each id ("first" mode puts the query pixel there exactly).
void write_trajectory_csv(const std::filesystem::path& path,
                          const std::vector<Trajectory>& trajectories);

std::vector<Trajectory> read_trajectory_csv(const std::filesystem::path& path);

// Query CSV: header `query_id,frame,x,y`.
void write_queries_csv(const std::filesystem::path& path, const std::vector<TrackQuery>& queries);
std::vector<TrackQuery> read_queries_csv(const std::filesystem::path& path);

}  // namespace corrtrack
