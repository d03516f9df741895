#pragma once

// Persistence: trajectories as tab-separated text, policies as a
// little-endian binary snapshot, datasets as a directory of trajectory files
// plus a JSON manifest, and experiment reports as TSV tables.
//
// Every double is written as the shortest decimal that reads back to the
// same bits, so save/load round trips are exact.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "drclab/domain.hpp"

namespace drc::store {

inline constexpr int kTrajectoryFormatVersion = 1;
inline constexpr int kPolicyFormatVersion = 1;
inline constexpr int kManifestFormatVersion = 1;
inline constexpr char kPolicyMagic[8] = {'D', 'R', 'C', 'P', 'O', 'L', 'C', 'Y'};

std::string format_double(double v);
// Whole-string parse; throws kFormat on junk.
double parse_double(std::string_view s);
std::int64_t parse_int(std::string_view s);
std::uint64_t parse_uint(std::string_view s);

// Git blob digest: SHA-1 over "blob <size>\0" followed by the bytes.
std::string git_digest(std::string_view bytes);
std::string sha1_hex(std::string_view bytes);

std::string read_file(const std::filesystem::path& path);
// Writes via a temporary file and rename.
void write_file(const std::filesystem::path& path, std::string_view bytes);

// Text fields shared with the wire protocol.
std::string encode_pose(const Pose7& p);  // 7 tab-separated numbers
std::string encode_task(const TaskSpec& task);
TaskSpec decode_task(const std::vector<std::string>& fields, std::size_t first);
inline constexpr std::size_t kTaskFieldCount = 15;

std::vector<std::string> split(std::string_view line, char sep);

std::string serialize_trajectory(const Trajectory& traj);
// Throws kFormat (with the 1-based line number), kVersionMismatch or
// kDigestMismatch.
Trajectory parse_trajectory(std::string_view text);

void save_trajectory(const std::filesystem::path& path, const Trajectory& traj);
Trajectory load_trajectory(const std::filesystem::path& path);

std::string serialize_policy(const PolicyParams& params);
PolicyParams parse_policy(std::string_view bytes);
void save_policy(const std::filesystem::path& path, const PolicyParams& params);
PolicyParams load_policy(const std::filesystem::path& path);

// Digest of a task's canonical text form.
std::string task_digest(const TaskSpec& task);

struct ManifestEntry {
  std::string file;
  std::string digest;
};

struct Manifest {
  int format_version = kManifestFormatVersion;
  DatasetLabel label = DatasetLabel::kPretraining;
  std::vector<ManifestEntry> trajectories;
  std::uint64_t plan_seed = 0;
  std::string task_digest;
};

// Writes traj-NNNN.txt files and manifest.json into dir.
Manifest save_dataset(const std::filesystem::path& dir, const Dataset& dataset,
                      std::uint64_t plan_seed);
// Checks the manifest version and every file digest.
Dataset load_dataset(const std::filesystem::path& dir);
Manifest load_manifest(const std::filesystem::path& dir);

struct Table {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
};

// Each table starts with "# <name>\tplan_seed=<seed>\tdigest=<git digest of
// the column header and rows>".
std::string render_report(std::uint64_t plan_seed, const std::vector<Table>& tables);
void save_report(const std::filesystem::path& path, std::uint64_t plan_seed,
                 const std::vector<Table>& tables);
// Parses a rendered report back and verifies each table digest.
std::vector<Table> parse_report(std::string_view text, std::uint64_t* plan_seed);

}  // namespace drc::store
