#pragma once

#include "speedtrack/io_formats.hpp"
#include "speedtrack/metrics.hpp"
#include "speedtrack/track_manager.hpp"

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace speedtrack::cli {

/// Entry point of the `speedtrack` executable. Exit codes: 0 ok, 1 runtime
/// failure (one `error: <kind>: <message>` line on stderr), 2 usage.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// A bundle directory itself, or every immediate subdirectory holding a
/// bundle, sorted by name.
std::vector<std::filesystem::path> discover_bundles(const std::filesystem::path& root);

/// One directory per line; relative entries resolve against the list's folder.
std::vector<std::filesystem::path> read_sequence_list(const std::filesystem::path& file);

/// Runs one tracker per bundle on up to `jobs` threads. Output order follows
/// the input order, so results do not depend on scheduling. `speeds`, when
/// given, replaces each bundle's own series.
std::vector<std::vector<io::ResultRow>> track_bundles(const std::vector<io::SequenceBundle>& bundles,
                                                      const TrackerConfig& cfg,
                                                      std::shared_ptr<const NoiseModel> noise, int jobs = 1,
                                                      const std::vector<std::vector<double>>* speeds = nullptr);

/// Summed evaluation counts over all bundles (ignore regions applied).
metrics::EvalCounts count_bundles(const std::vector<io::SequenceBundle>& bundles,
                                  const std::vector<std::vector<io::ResultRow>>& results);

std::vector<metrics::BucketStats> bucket_bundles(const std::vector<io::SequenceBundle>& bundles,
                                                 const std::vector<std::vector<io::ResultRow>>& results,
                                                 const std::vector<double>& centers, double half_width = 5.0);

}  // namespace speedtrack::cli
