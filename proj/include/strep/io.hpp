#pragma once

// File formats: binary datasets and checkpoints with a one-line JSON header,
// PGM occupancy maps, and CSV pose/history tables.
//
// Dataset layout (all binary values little-endian):
//   "STREPDS\n"
//   {"dim":..,"format_version":1,"has_gt":..,"num_frames":..,"units":..}\n
//   per frame: u32 beam_count, f64 points[beam_count * dim] (row-major),
//              f64 sensor_origin[dim], f64 gt_pose[P] when has_gt
//   {"env_name":..,"generator_version":..,"seed":..}\n
//
// Checkpoint layout:
//   "STREPCK\n"
//   {"config":{..},"config_hash":..,"format_version":1,"tensors":[..]}\n
//   f64 payload of every listed tensor in order (row-major)

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "strep/metrics.hpp"
#include "strep/simulator.hpp"
#include "strep/trainer.hpp"

namespace strep::io {

using json = nlohmann::json;

inline constexpr int kDatasetVersion = 1;
inline constexpr int kCheckpointVersion = 1;
inline constexpr const char* kDatasetMagic = "STREPDS\n";
inline constexpr const char* kCheckpointMagic = "STREPCK\n";

// ---------------------------------------------------------------------------
// Byte-level helpers

class ByteWriter {
 public:
  void raw(const std::string& s) { buf_ += s; }

  void u32(std::uint32_t v) { put_le(v); }
  void f64(double v) { put_le(std::bit_cast<std::uint64_t>(v)); }
  void f64s(const double* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) f64(p[i]);
  }

  const std::string& bytes() const { return buf_; }

 private:
  template <class U>
  void put_le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i)
      buf_.push_back(char((v >> (8 * i)) & 0xFF));
  }
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(std::string data, std::string what)
      : data_(std::move(data)), what_(std::move(what)) {}

  std::size_t offset() const { return pos_; }
  bool at_end() const { return pos_ == data_.size(); }

  [[noreturn]] void fail(const std::string& msg) const {
    throw IoError(what_ + ": " + msg + " at byte offset " + std::to_string(pos_));
  }

  void expect(const std::string& magic) {
    if (data_.compare(pos_, magic.size(), magic) != 0) fail("bad magic");
    pos_ += magic.size();
  }

  std::string line() {
    const std::size_t end = data_.find('\n', pos_);
    if (end == std::string::npos) fail("unterminated header line");
    std::string s = data_.substr(pos_, end - pos_);
    pos_ = end + 1;
    return s;
  }

  json json_line(const char* name) {
    const std::size_t start = pos_;
    const std::string s = line();
    try {
      return json::parse(s);
    } catch (const json::exception& e) {
      pos_ = start;
      fail(std::string("malformed ") + name + " (" + e.what() + ")");
    }
  }

  std::uint32_t u32() { return get_le<std::uint32_t>(); }
  double f64() { return std::bit_cast<double>(get_le<std::uint64_t>()); }
  void f64s(double* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) p[i] = f64();
  }

 private:
  template <class U>
  U get_le() {
    if (data_.size() - pos_ < sizeof(U)) fail("truncated payload");
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      v |= U(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }
  std::string data_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open '" + p.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& bytes) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + p.string() + "' for writing");
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw IoError("write failed for '" + p.string() + "'");
}

// ---------------------------------------------------------------------------
// Dataset

inline std::string encode_dataset(const SequenceDataset& ds) {
  ds.validate();
  ByteWriter w;
  w.raw(kDatasetMagic);
  const json header = {{"format_version", kDatasetVersion},
                       {"dim", ds.dim},
                       {"num_frames", ds.frames.size()},
                       {"has_gt", ds.has_gt()},
                       {"units", ds.units}};
  w.raw(header.dump() + "\n");
  for (std::size_t i = 0; i < ds.frames.size(); ++i) {
    const PointSet& f = ds.frames[i];
    w.u32(std::uint32_t(f.size()));
    w.f64s(f.points.data(), std::size_t(f.points.size()));
    w.f64s(f.sensor_origin.data(), std::size_t(f.sensor_origin.size()));
    if (ds.has_gt()) {
      const auto p = (*ds.gt_poses)[i].params();
      w.f64s(p.data(), p.size());
    }
  }
  const json trailer = {{"env_name", ds.env_name},
                        {"seed", ds.seed},
                        {"generator_version", ds.generator_version}};
  w.raw(trailer.dump() + "\n");
  return w.bytes();
}

inline SequenceDataset decode_dataset(std::string bytes,
                                      const std::string& what = "dataset") {
  ByteReader r(std::move(bytes), what);
  r.expect(kDatasetMagic);
  const std::size_t header_at = r.offset();
  const json h = r.json_line("header");
  SequenceDataset ds;
  std::size_t frames = 0;
  bool has_gt = false;
  try {
    if (h.at("format_version").get<int>() != kDatasetVersion)
      throw IoError("unsupported format_version " + h.at("format_version").dump());
    ds.dim = h.at("dim").get<int>();
    frames = h.at("num_frames").get<std::size_t>();
    has_gt = h.at("has_gt").get<bool>();
    ds.units = h.at("units").get<std::string>();
  } catch (const std::exception& e) {
    throw IoError(what + ": invalid header at byte offset " +
                  std::to_string(header_at) + " (" + e.what() + ")");
  }
  if (ds.dim != 2 && ds.dim != 3)
    throw IoError(what + ": invalid dim in header at byte offset " +
                  std::to_string(header_at));
  if (frames == 0 || frames > (1u << 24))
    throw IoError(what + ": invalid num_frames in header at byte offset " +
                  std::to_string(header_at));
  const int np = pose_param_count(ds.dim);
  std::vector<Pose> gt;
  for (std::size_t i = 0; i < frames; ++i) {
    const std::size_t n = r.u32();
    if (n == 0) r.fail("frame " + std::to_string(i) + " has zero points");
    RowMatrix pts(Eigen::Index(n), ds.dim);
    r.f64s(pts.data(), std::size_t(pts.size()));
    Eigen::VectorXd origin(ds.dim);
    r.f64s(origin.data(), std::size_t(ds.dim));
    ds.frames.emplace_back(ds.dim, std::move(pts), std::move(origin));
    if (has_gt) {
      std::vector<double> p(std::size_t(np), 0.0);
      r.f64s(p.data(), p.size());
      gt.push_back(Pose::from_params(ds.dim, p));
    }
  }
  const json t = r.json_line("trailer");
  try {
    ds.env_name = t.at("env_name").get<std::string>();
    ds.seed = t.at("seed").get<std::uint64_t>();
    ds.generator_version = t.at("generator_version").get<std::string>();
  } catch (const json::exception& e) {
    r.fail(std::string("invalid trailer (") + e.what() + ")");
  }
  if (!r.at_end()) r.fail("trailing bytes after dataset");
  if (has_gt) ds.gt_poses = std::move(gt);
  try {
    ds.validate();
  } catch (const UsageError& e) {
    throw IoError(what + ": " + e.what());
  }
  return ds;
}

inline void save_dataset(const std::filesystem::path& p, const SequenceDataset& ds) {
  write_file(p, encode_dataset(ds));
}

inline SequenceDataset load_dataset(const std::filesystem::path& p) {
  return decode_dataset(read_file(p), p.string());
}

// ---------------------------------------------------------------------------
// PGM (P5) maps: 0 = occupied, 255 = free.

inline std::string encode_pgm(const EnvironmentMap& env) {
  std::string out = "P5\n# " + env.name + "\n" + std::to_string(env.width) +
                    " " + std::to_string(env.height) + "\n255\n";
  out.reserve(out.size() + env.cells.size());
  for (auto c : env.cells) out.push_back(c ? char(0) : char(255));
  return out;
}

inline EnvironmentMap decode_pgm(const std::string& bytes, std::string name) {
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    std::string t;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos])))
      t.push_back(bytes[pos++]);
    return t;
  };
  if (token() != "P5") throw IoError(name + ": not a binary PGM (P5) at byte offset 0");
  int w = 0, h = 0, maxv = 0;
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    maxv = std::stoi(token());
  } catch (const std::exception&) {
    throw IoError(name + ": malformed PGM header at byte offset " + std::to_string(pos));
  }
  if (w <= 0 || h <= 0 || maxv != 255)
    throw IoError(name + ": unsupported PGM geometry at byte offset " + std::to_string(pos));
  ++pos;  // single whitespace before raster
  if (bytes.size() - std::min(pos, bytes.size()) != std::size_t(w) * std::size_t(h))
    throw IoError(name + ": PGM raster size mismatch at byte offset " + std::to_string(pos));
  EnvironmentMap env(w, h, std::move(name));
  for (std::size_t i = 0; i < env.cells.size(); ++i)
    env.cells[i] = static_cast<unsigned char>(bytes[pos + i]) < 128 ? 1 : 0;
  return env;
}

inline void save_pgm(const std::filesystem::path& p, const EnvironmentMap& env) {
  write_file(p, encode_pgm(env));
}

inline EnvironmentMap load_pgm(const std::filesystem::path& p) {
  return decode_pgm(read_file(p), p.stem().string());
}

// ---------------------------------------------------------------------------
// CSV helpers

inline std::string fmt_double(double v) {
  std::ostringstream ss;
  ss << std::setprecision(17) << v;
  return ss.str();
}

inline std::string pose_csv_header(int dim) {
  return dim == 2 ? "frame,tx,ty,theta" : "frame,tx,ty,tz,yaw,pitch,roll";
}

inline std::string encode_poses_csv(const std::vector<Pose>& poses) {
  if (poses.empty()) throw UsageError("no poses to write");
  std::string out = pose_csv_header(poses[0].dim) + "\n";
  for (std::size_t i = 0; i < poses.size(); ++i) {
    out += std::to_string(i);
    for (double v : poses[i].params()) out += "," + fmt_double(v);
    out += "\n";
  }
  return out;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string c;
  while (std::getline(ss, c, ',')) cells.push_back(c);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline std::vector<Pose> decode_poses_csv(const std::string& text,
                                          const std::string& what = "poses") {
  std::stringstream ss(text);
  std::string line;
  if (!std::getline(ss, line)) throw IoError(what + ": empty pose file");
  int dim = 0;
  if (line == pose_csv_header(2)) dim = 2;
  else if (line == pose_csv_header(3)) dim = 3;
  else throw IoError(what + ": unrecognised header '" + line + "' at line 1");
  std::vector<Pose> poses;
  int lineno = 1;
  while (std::getline(ss, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (int(cells.size()) != 1 + pose_param_count(dim))
      throw IoError(what + ": wrong column count at line " + std::to_string(lineno));
    std::vector<double> p;
    try {
      if (std::stoul(cells[0]) != poses.size())
        throw IoError(what + ": frames out of order at line " + std::to_string(lineno));
      for (std::size_t i = 1; i < cells.size(); ++i) p.push_back(std::stod(cells[i]));
    } catch (const std::logic_error&) {
      throw IoError(what + ": malformed number at line " + std::to_string(lineno));
    }
    poses.push_back(Pose::from_params(dim, p));
  }
  return poses;
}

inline std::string history_csv(const std::vector<HistoryRow>& rows) {
  std::string out = "iteration,local_loss,global_loss,total,ate,point_dist\n";
  for (const auto& r : rows) {
    out += std::to_string(r.iteration) + "," + fmt_double(r.local_loss) + "," +
           fmt_double(r.global_loss) + "," + fmt_double(r.total) + "," +
           (r.ate ? fmt_double(*r.ate) : "") + "," +
           (r.point_dist ? fmt_double(*r.point_dist) : "") + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// EvalReport

inline json pose_json(const Pose& p) {
  return json{{"dim", p.dim}, {"params", p.params()}};
}

inline json report_json(const EvalReport& r) {
  return json{{"ate", r.ate},
              {"point_dist", r.point_dist},
              {"point_sq_sum", r.point_sq_sum},
              {"frame_translation_errors", r.frame_translation_errors},
              {"frame_point_dists", r.frame_point_dists},
              {"alignment", pose_json(r.alignment)},
              {"anchor", anchor_name(r.anchor)}};
}

inline std::string report_csv(const EvalReport& r) {
  std::string out = "frame,translation_error,point_dist\n";
  for (std::size_t i = 0; i < r.frame_translation_errors.size(); ++i)
    out += std::to_string(i) + "," + fmt_double(r.frame_translation_errors[i]) +
           "," + fmt_double(r.frame_point_dists[i]) + "\n";
  out += "mean,ate=" + fmt_double(r.ate) + ",point_dist=" + fmt_double(r.point_dist) +
         "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint

struct Checkpoint {
  StrepModel model;
  std::vector<RowMatrix> latents;  // raw latents, one matrix per sequence
};

inline json decoder_config_json(const DecoderConfig& c) {
  return json{{"dim", c.dim},
              {"latent_dim", c.latent_dim},
              {"kernel_width", c.kernel_width},
              {"trans_scale", c.trans_scale},
              {"point_widths", c.point_widths},
              {"head_widths", c.head_widths},
              {"head_init_scale", c.head_init_scale}};
}

inline DecoderConfig decoder_config_from(const json& j) {
  DecoderConfig c;
  c.dim = j.at("dim").get<int>();
  c.latent_dim = j.at("latent_dim").get<int>();
  c.kernel_width = j.at("kernel_width").get<int>();
  c.trans_scale = j.at("trans_scale").get<double>();
  c.point_widths = j.at("point_widths").get<std::vector<int>>();
  c.head_widths = j.at("head_widths").get<std::vector<int>>();
  c.head_init_scale = j.at("head_init_scale").get<double>();
  return c;
}

inline json model_config_json(const StrepModel& m) {
  std::vector<double> extent(m.occupancy.config.world_extent.data(),
                             m.occupancy.config.world_extent.data() +
                                 m.occupancy.config.world_extent.size());
  return json{{"decoder", decoder_config_json(m.decoder.config)},
              {"occupancy",
               {{"dim", m.occupancy.config.dim},
                {"hidden", m.occupancy.config.hidden},
                {"world_extent", extent}}},
              {"temporal", m.temporal}};
}

// FNV-1a over the canonical JSON text of the model configuration.
inline std::string config_hash(const json& config) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : config.dump()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << h;
  return ss.str();
}

namespace detail {

template <class Fn>
void for_each_tensor(Checkpoint& ck, Fn&& fn) {
  auto layers = [&](const char* prefix, std::vector<Layer>& ls) {
    for (std::size_t i = 0; i < ls.size(); ++i) {
      fn(std::string(prefix) + "." + std::to_string(i) + ".weight", ls[i].weight);
      fn(std::string(prefix) + "." + std::to_string(i) + ".bias", ls[i].bias);
    }
  };
  layers("decoder.point", ck.model.decoder.point_stage);
  layers("decoder.head", ck.model.decoder.head);
  layers("occupancy", ck.model.occupancy.layers);
  fn("decay", ck.model.decay);
  for (std::size_t i = 0; i < ck.latents.size(); ++i)
    fn("latents." + std::to_string(i), ck.latents[i]);
}

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ck_in) {
  Checkpoint ck = ck_in;
  json tensors = json::array();
  ByteWriter payload;
  detail::for_each_tensor(ck, [&](const std::string& name, RowMatrix& m) {
    tensors.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
    payload.f64s(m.data(), std::size_t(m.size()));
  });
  const json cfg = model_config_json(ck.model);
  const json header = {{"format_version", kCheckpointVersion},
                       {"config", cfg},
                       {"config_hash", config_hash(cfg)},
                       {"latent_sequences", ck.latents.size()},
                       {"tensors", tensors}};
  return std::string(kCheckpointMagic) + header.dump() + "\n" + payload.bytes();
}

inline Checkpoint decode_checkpoint(std::string bytes,
                                    const std::string& what = "checkpoint") {
  ByteReader r(std::move(bytes), what);
  r.expect(kCheckpointMagic);
  const std::size_t header_at = r.offset();
  const json h = r.json_line("header");
  Checkpoint ck;
  json tensors;
  try {
    if (h.at("format_version").get<int>() != kCheckpointVersion)
      throw IoError("unsupported format_version");
    const json& cfg = h.at("config");
    if (config_hash(cfg) != h.at("config_hash").get<std::string>())
      throw IoError("config hash mismatch");
    const DecoderConfig dcfg = decoder_config_from(cfg.at("decoder"));
    OccupancyConfig ocfg;
    ocfg.dim = cfg.at("occupancy").at("dim").get<int>();
    ocfg.hidden = cfg.at("occupancy").at("hidden").get<std::vector<int>>();
    const auto extent = cfg.at("occupancy").at("world_extent").get<std::vector<double>>();
    ocfg.world_extent = Eigen::Map<const Eigen::VectorXd>(extent.data(),
                                                          Eigen::Index(extent.size()));
    ck.model = init_strep_model(dcfg, ocfg, 0, cfg.at("temporal").get<bool>());
    ck.latents.resize(h.at("latent_sequences").get<std::size_t>());
    tensors = h.at("tensors");
  } catch (const std::exception& e) {
    throw IoError(what + ": invalid header at byte offset " +
                  std::to_string(header_at) + " (" + e.what() + ")");
  }
  std::size_t idx = 0;
  detail::for_each_tensor(ck, [&](const std::string& name, RowMatrix& m) {
    if (idx >= tensors.size()) r.fail("header lists too few tensors");
    const json& t = tensors[idx++];
    if (t.at("name").get<std::string>() != name)
      r.fail("unexpected tensor '" + t.at("name").get<std::string>() + "'");
    const auto rows = t.at("rows").get<Eigen::Index>();
    const auto cols = t.at("cols").get<Eigen::Index>();
    if (name.rfind("latents.", 0) == 0) {
      m.resize(rows, cols);
    } else if (m.rows() != rows || m.cols() != cols) {
      r.fail("shape mismatch for tensor '" + name + "'");
    }
    r.f64s(m.data(), std::size_t(m.size()));
  });
  if (idx != tensors.size()) r.fail("header lists unknown tensors");
  if (!r.at_end()) r.fail("trailing bytes after checkpoint payload");
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& p, const Checkpoint& ck) {
  write_file(p, encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& p) {
  return decode_checkpoint(read_file(p), p.string());
}

}  // namespace strep::io
