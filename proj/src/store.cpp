#include "drclab/store.hpp"

#include <openssl/evp.h>

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace drc::store {

namespace fs = std::filesystem;

std::string format_double(double v) {
  if (!std::isfinite(v))
    throw Error(ErrorCode::kNonFinite, "cannot serialize non-finite value");
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v))
    throw Error(ErrorCode::kFormat, "bad number '" + std::string(s) + "'");
  return v;
}

std::int64_t parse_int(std::string_view s) {
  std::int64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw Error(ErrorCode::kFormat, "bad integer '" + std::string(s) + "'");
  return v;
}

std::uint64_t parse_uint(std::string_view s) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw Error(ErrorCode::kFormat, "bad unsigned integer '" + std::string(s) + "'");
  return v;
}

std::string sha1_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha1(), nullptr) != 1)
    throw Error(ErrorCode::kIo, "SHA-1 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 15]);
  }
  return out;
}

std::string git_digest(std::string_view bytes) {
  std::string blob = "blob " + std::to_string(bytes.size());
  blob.push_back('\0');
  blob.append(bytes);
  return sha1_hex(blob);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::kIo, "short write to " + path.string());
  }
  fs::rename(tmp, path);
}

std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.emplace_back(line.substr(start));
      return out;
    }
    out.emplace_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

namespace {

void put(std::string& out, double v) {
  out += '\t';
  out += format_double(v);
}

template <std::size_t N>
void put(std::string& out, const std::array<double, N>& v) {
  for (double x : v) put(out, x);
}

void put(std::string& out, const Pose7& p) {
  put(out, p.position);
  put(out, p.orientation);
  put(out, p.gripper);
}

// Sequential reader over one line's fields.
class Fields {
 public:
  Fields(std::vector<std::string> f, std::size_t pos) : f_(std::move(f)), pos_(pos) {}
  const std::string& next() {
    if (pos_ >= f_.size()) throw Error(ErrorCode::kFormat, "too few fields");
    return f_[pos_++];
  }
  double num() { return parse_double(next()); }
  template <std::size_t N>
  std::array<double, N> vec() {
    std::array<double, N> v{};
    for (auto& x : v) x = num();
    return v;
  }
  Pose7 pose() {
    Pose7 p;
    p.position = vec<3>();
    p.orientation = vec<3>();
    p.gripper = num();
    return p;
  }
  bool flag() {
    const std::string& s = next();
    if (s == "0") return false;
    if (s == "1") return true;
    throw Error(ErrorCode::kFormat, "bad flag '" + s + "'");
  }
  bool at_end() const { return pos_ == f_.size(); }
  const std::vector<std::string>& all() const { return f_; }

 private:
  std::vector<std::string> f_;
  std::size_t pos_;
};

[[noreturn]] void line_error(std::size_t line, const std::string& what) {
  throw Error(ErrorCode::kFormat, "line " + std::to_string(line) + ": " + what);
}

}  // namespace

std::string encode_pose(const Pose7& p) {
  std::string s;
  put(s, p);
  return s.substr(1);
}

std::string encode_task(const TaskSpec& t) {
  std::string s = to_string(t.family);
  put(s, t.target_region.lo);
  put(s, t.target_region.hi);
  s += '\t';
  s += t.object_variant;
  put(s, t.grasp_tolerance);
  put(s, t.stain_radius_range.first);
  put(s, t.stain_radius_range.second);
  put(s, t.actuation_bias);
  put(s, t.sensing_noise_std);
  return s;
}

TaskSpec decode_task(const std::vector<std::string>& fields, std::size_t first) {
  if (fields.size() < first + kTaskFieldCount)
    throw Error(ErrorCode::kFormat, "task needs " + std::to_string(kTaskFieldCount) +
                                        " fields");
  Fields f(fields, first);
  TaskSpec t;
  t.family = task_family_from_string(f.next());
  t.target_region.lo = f.vec<3>();
  t.target_region.hi = f.vec<3>();
  t.object_variant = f.next();
  if (t.object_variant.empty() ||
      t.object_variant.find_first_of(" \t\r\n") != std::string::npos)
    throw Error(ErrorCode::kFormat, "bad variant name");
  t.grasp_tolerance = f.num();
  t.stain_radius_range.first = f.num();
  t.stain_radius_range.second = f.num();
  t.actuation_bias = f.vec<3>();
  t.sensing_noise_std = f.num();
  return t;
}

std::string task_digest(const TaskSpec& task) { return git_digest(encode_task(task)); }

// ---------------------------------------------------------------------------
// Trajectories

std::string serialize_trajectory(const Trajectory& traj) {
  std::string s = "drclab-trajectory\t" + std::to_string(kTrajectoryFormatVersion) + "\n";
  s += "task\t" + encode_task(traj.task) + "\n";
  s += "seed\t" + std::to_string(traj.seed) + "\n";
  for (const StepRecord& r : traj.steps) {
    s += "step\t" + std::to_string(r.tick);
    const Observation& o = r.observation;
    put(s, o.gripper_pose);
    put(s, o.target_sighting);
    s += o.contact_flag ? "\t1" : "\t0";
    put(s, o.task_phase_hint);
    put(s, o.appearance);
    put(s, r.policy_action);
    put(s, r.applied_action);
    if (r.correction_event)
      put(s, *r.correction_event);
    else
      s += "\t-";
    s += '\t';
    s += to_string(r.mode);
    s += r.intervention_flag ? "\t1" : "\t0";
    s += '\n';
  }
  const EpisodeOutcome& oc = traj.outcome;
  s += "outcome";
  put(s, oc.score);
  s += '\t';
  s += to_string(oc.phase_reached);
  s += '\t' + std::to_string(oc.ticks_used);
  put(s, oc.intervention_rate);
  s += '\n';
  s += "digest\t" + git_digest(s) + "\n";
  return s;
}

Trajectory parse_trajectory(std::string_view text) {
  Trajectory t;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  enum { kHeader, kTask, kSeed, kSteps, kDigest, kDone } expect = kHeader;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    ++line_no;
    if (nl == std::string_view::npos) line_error(line_no, "unterminated line");
    const std::string_view line = text.substr(pos, nl - pos);
    const std::size_t line_start = pos;
    pos = nl + 1;
    const auto parts = split(line, '\t');
    const std::string& tag = parts[0];
    try {
      switch (expect) {
        case kHeader: {
          if (tag != "drclab-trajectory" || parts.size() != 2)
            line_error(line_no, "missing trajectory header");
          const auto v = parse_int(parts[1]);
          if (v != kTrajectoryFormatVersion)
            throw Error(ErrorCode::kVersionMismatch,
                        "trajectory format version " + parts[1] + " unsupported");
          expect = kTask;
          break;
        }
        case kTask:
          if (tag != "task" || parts.size() != 1 + kTaskFieldCount)
            line_error(line_no, "expected task line");
          t.task = decode_task(parts, 1);
          expect = kSeed;
          break;
        case kSeed:
          if (tag != "seed" || parts.size() != 2) line_error(line_no, "expected seed line");
          t.seed = parse_uint(parts[1]);
          expect = kSteps;
          break;
        case kSteps:
          if (tag == "step") {
            Fields f(parts, 1);
            StepRecord r;
            r.tick = parse_int(f.next());
            r.observation.gripper_pose = f.pose();
            r.observation.target_sighting = f.vec<3>();
            r.observation.contact_flag = f.flag();
            r.observation.task_phase_hint = f.num();
            r.observation.appearance = f.num();
            r.policy_action = f.pose();
            r.applied_action = f.pose();
            if (parts.size() == 1 + 1 + 13 + 7 + 7 + 6 + 2) {
              r.correction_event = f.vec<6>();
            } else if (f.next() != "-") {
              line_error(line_no, "bad correction field");
            }
            r.mode = control_mode_from_string(f.next());
            r.intervention_flag = f.flag();
            if (!f.at_end()) line_error(line_no, "too many fields");
            t.steps.push_back(std::move(r));
          } else if (tag == "outcome") {
            if (parts.size() != 5) line_error(line_no, "expected 4 outcome fields");
            t.outcome.score = parse_double(parts[1]);
            t.outcome.phase_reached = task_phase_from_string(parts[2]);
            t.outcome.ticks_used = parse_int(parts[3]);
            t.outcome.intervention_rate = parse_double(parts[4]);
            expect = kDigest;
          } else {
            line_error(line_no, "expected step or outcome line");
          }
          break;
        case kDigest: {
          if (tag != "digest" || parts.size() != 2) line_error(line_no, "expected digest line");
          const std::string actual = git_digest(text.substr(0, line_start));
          if (actual != parts[1])
            throw Error(ErrorCode::kDigestMismatch,
                        "trajectory digest " + parts[1] + " does not match content " +
                            actual);
          expect = kDone;
          break;
        }
        case kDone:
          line_error(line_no, "content after digest");
      }
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kVersionMismatch ||
          e.code() == ErrorCode::kDigestMismatch ||
          std::string(e.what()).rfind("line ", 0) == 0)
        throw;
      line_error(line_no, e.what());
    } catch (const std::exception& e) {
      line_error(line_no, e.what());
    }
  }
  if (expect != kDone) line_error(line_no + 1, "file ends early");
  return t;
}

void save_trajectory(const fs::path& path, const Trajectory& traj) {
  write_file(path, serialize_trajectory(traj));
}

Trajectory load_trajectory(const fs::path& path) {
  try {
    return parse_trajectory(read_file(path));
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Policy snapshots

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class Reader {
 public:
  explicit Reader(std::string_view b) : b_(b) {}
  std::uint64_t uint(int bytes) {
    if (pos_ + static_cast<std::size_t>(bytes) > b_.size())
      throw Error(ErrorCode::kFormat, "policy file truncated at byte " + std::to_string(pos_));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(uint(4)); }
  double f64() { return std::bit_cast<double>(uint(8)); }
  std::string_view bytes(std::size_t n) {
    if (pos_ + n > b_.size()) throw Error(ErrorCode::kFormat, "policy file truncated");
    auto v = b_.substr(pos_, n);
    pos_ += n;
    return v;
  }
  // Guards counts against absurd allocations from corrupt files.
  std::size_t count(std::size_t element_size) {
    const std::uint64_t n = uint(8);
    if (n > (b_.size() - pos_) / element_size)
      throw Error(ErrorCode::kFormat, "policy file count exceeds remaining bytes");
    return static_cast<std::size_t>(n);
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  std::string_view b_;
  std::size_t pos_ = 0;
};

void put_norm(std::string& out, const Normalization& n) {
  put_u64(out, n.mean.size());
  for (double v : n.mean) put_f64(out, v);
  put_u64(out, n.stddev.size());
  for (double v : n.stddev) put_f64(out, v);
}

Normalization get_norm(Reader& r) {
  Normalization n;
  n.mean.resize(r.count(8));
  for (auto& v : n.mean) v = r.f64();
  n.stddev.resize(r.count(8));
  for (auto& v : n.stddev) v = r.f64();
  return n;
}

}  // namespace

std::string serialize_policy(const PolicyParams& p) {
  std::string out(kPolicyMagic, sizeof kPolicyMagic);
  put_u32(out, kPolicyFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(p.horizon));
  put_u32(out, static_cast<std::uint32_t>(p.execute_steps));
  put_u64(out, p.widths.size());
  for (int w : p.widths) put_u32(out, static_cast<std::uint32_t>(w));
  put_norm(out, p.observation_norm);
  put_norm(out, p.action_norm);
  put_u64(out, p.weights.size());
  for (double w : p.weights) put_f64(out, w);
  return out;
}

PolicyParams parse_policy(std::string_view bytes) {
  Reader r(bytes);
  if (bytes.size() < sizeof kPolicyMagic ||
      std::memcmp(bytes.data(), kPolicyMagic, sizeof kPolicyMagic) != 0)
    throw Error(ErrorCode::kFormat, "not a policy snapshot (bad magic)");
  r.bytes(sizeof kPolicyMagic);
  const std::uint32_t version = r.u32();
  if (version != kPolicyFormatVersion)
    throw Error(ErrorCode::kVersionMismatch,
                "policy format version " + std::to_string(version) + " unsupported");
  PolicyParams p;
  p.horizon = static_cast<int>(r.u32());
  p.execute_steps = static_cast<int>(r.u32());
  p.widths.resize(r.count(4));
  for (int& w : p.widths) w = static_cast<int>(r.u32());
  p.observation_norm = get_norm(r);
  p.action_norm = get_norm(r);
  p.weights.resize(r.count(8));
  for (double& w : p.weights) w = r.f64();
  if (!r.done()) throw Error(ErrorCode::kFormat, "trailing bytes after policy weights");
  const ValidationReport rep = validate(p);
  if (!rep.empty()) throw Error(ErrorCode::kFormat, "invalid policy: " + rep.front());
  return p;
}

void save_policy(const fs::path& path, const PolicyParams& params) {
  write_file(path, serialize_policy(params));
}

PolicyParams load_policy(const fs::path& path) {
  try {
    return parse_policy(read_file(path));
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Datasets

namespace {

using nlohmann::ordered_json;

std::string manifest_json(const Manifest& m) {
  ordered_json j;
  j["format_version"] = m.format_version;
  j["label"] = to_string(m.label);
  j["plan_seed"] = m.plan_seed;
  j["task_digest"] = m.task_digest;
  ordered_json files = ordered_json::array();
  for (const auto& e : m.trajectories) files.push_back({{"file", e.file}, {"digest", e.digest}});
  j["trajectories"] = files;
  return j.dump(2) + "\n";
}

}  // namespace

Manifest save_dataset(const fs::path& dir, const Dataset& dataset,
                      std::uint64_t plan_seed) {
  fs::create_directories(dir);
  Manifest m;
  m.label = dataset.label;
  m.plan_seed = plan_seed;
  m.task_digest = dataset.empty() ? "" : task_digest(dataset.trajectories.front().task);
  for (std::size_t i = 0; i < dataset.trajectories.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "traj-%04zu.txt", i);
    const std::string text = serialize_trajectory(dataset.trajectories[i]);
    write_file(dir / name, text);
    m.trajectories.push_back({name, git_digest(text)});
  }
  write_file(dir / "manifest.json", manifest_json(m));
  return m;
}

Manifest load_manifest(const fs::path& dir) {
  const std::string text = read_file(dir / "manifest.json");
  Manifest m;
  try {
    const auto j = nlohmann::json::parse(text);
    m.format_version = j.at("format_version").get<int>();
    if (m.format_version != kManifestFormatVersion)
      throw Error(ErrorCode::kVersionMismatch,
                  "manifest version " + std::to_string(m.format_version) + " unsupported");
    m.label = dataset_label_from_string(j.at("label").get<std::string>());
    m.plan_seed = j.at("plan_seed").get<std::uint64_t>();
    m.task_digest = j.at("task_digest").get<std::string>();
    for (const auto& e : j.at("trajectories"))
      m.trajectories.push_back(
          {e.at("file").get<std::string>(), e.at("digest").get<std::string>()});
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormat, (dir / "manifest.json").string() + ": " + e.what());
  }
  return m;
}

Dataset load_dataset(const fs::path& dir) {
  const Manifest m = load_manifest(dir);
  Dataset d{m.label, {}};
  for (const auto& e : m.trajectories) {
    if (e.file.find('/') != std::string::npos || e.file.find("..") != std::string::npos)
      throw Error(ErrorCode::kFormat, "manifest names a file outside the dataset: " + e.file);
    const std::string text = read_file(dir / e.file);
    const std::string actual = git_digest(text);
    if (actual != e.digest)
      throw Error(ErrorCode::kDigestMismatch,
                  (dir / e.file).string() + ": manifest digest " + e.digest +
                      " but content is " + actual);
    try {
      d.trajectories.push_back(parse_trajectory(text));
    } catch (const Error& err) {
      throw Error(err.code(), (dir / e.file).string() + ": " + err.what());
    }
  }
  if (!d.empty() && task_digest(d.trajectories.front().task) != m.task_digest)
    throw Error(ErrorCode::kDigestMismatch, "manifest task digest does not match first trajectory");
  return d;
}

// ---------------------------------------------------------------------------
// Reports

namespace {

std::string table_body(const Table& t) {
  std::string body;
  for (std::size_t i = 0; i < t.columns.size(); ++i) {
    if (i) body += '\t';
    body += t.columns[i];
  }
  body += '\n';
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) body += '\t';
      body += row[i];
    }
    body += '\n';
  }
  return body;
}

}  // namespace

std::string render_report(std::uint64_t plan_seed, const std::vector<Table>& tables) {
  std::string out;
  for (std::size_t i = 0; i < tables.size(); ++i) {
    const Table& t = tables[i];
    for (const auto& row : t.rows)
      if (row.size() != t.columns.size())
        throw Error(ErrorCode::kInvalidArgument, "table " + t.name + " has a ragged row");
    const std::string body = table_body(t);
    if (i) out += '\n';
    out += "# " + t.name + "\tplan_seed=" + std::to_string(plan_seed) +
           "\tdigest=" + git_digest(body) + "\n";
    out += body;
  }
  return out;
}

void save_report(const fs::path& path, std::uint64_t plan_seed,
                 const std::vector<Table>& tables) {
  write_file(path, render_report(plan_seed, tables));
}

std::vector<Table> parse_report(std::string_view text, std::uint64_t* plan_seed) {
  std::vector<Table> tables;
  std::vector<std::string> digests;
  std::size_t line_no = 0;
  bool want_columns = false;
  for (const std::string& line : split(text, '\n')) {
    ++line_no;
    if (line.empty()) continue;
    if (line.rfind("# ", 0) == 0) {
      const auto parts = split(std::string_view(line).substr(2), '\t');
      if (parts.size() != 3 || parts[1].rfind("plan_seed=", 0) != 0 ||
          parts[2].rfind("digest=", 0) != 0)
        line_error(line_no, "bad table header");
      if (plan_seed) *plan_seed = parse_uint(std::string_view(parts[1]).substr(10));
      tables.push_back(Table{parts[0], {}, {}});
      digests.push_back(parts[2].substr(7));
      want_columns = true;
    } else if (tables.empty()) {
      line_error(line_no, "row before any table header");
    } else if (want_columns) {
      tables.back().columns = split(line, '\t');
      want_columns = false;
    } else {
      auto row = split(line, '\t');
      if (row.size() != tables.back().columns.size()) line_error(line_no, "ragged row");
      tables.back().rows.push_back(std::move(row));
    }
  }
  for (std::size_t i = 0; i < tables.size(); ++i)
    if (git_digest(table_body(tables[i])) != digests[i])
      throw Error(ErrorCode::kDigestMismatch, "table " + tables[i].name + " digest mismatch");
  return tables;
}

}  // namespace drc::store
