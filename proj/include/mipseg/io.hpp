#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mipseg/config.hpp"
#include "mipseg/model.hpp"
#include "mipseg/phantom.hpp"
#include "mipseg/run_state.hpp"
#include "mipseg/volume.hpp"

namespace mipseg {

static_assert(std::endian::native == std::endian::little,
              "file payloads are little-endian; big-endian hosts are unsupported");

enum class VolumeKind { Scan, Mask, Prob };

inline const char* kind_name(VolumeKind k) {
  switch (k) {
    case VolumeKind::Scan: return "scan";
    case VolumeKind::Mask: return "mask";
    case VolumeKind::Prob: return "prob";
  }
  return "?";
}

inline VolumeKind kind_from_name(const std::string& s) {
  if (s == "scan") return VolumeKind::Scan;
  if (s == "mask") return VolumeKind::Mask;
  if (s == "prob") return VolumeKind::Prob;
  throw FormatError("unknown volume kind '" + s + "'");
}

namespace detail {

inline void validate_payload(const Volume<float>& v, VolumeKind kind) {
  for (size_t i = 0; i < v.voxels.size(); ++i) {
    const float x = v.voxels[i];
    if (kind == VolumeKind::Mask) {
      if (x != 0.0f && x != 1.0f)
        throw FormatError("mask value " + std::to_string(x) + " outside {0,1} at index " +
                          std::to_string(i));
    } else if (kind == VolumeKind::Scan) {
      if (!(x >= 0.0f))
        throw FormatError("scan value " + std::to_string(x) + " below 0 at index " +
                          std::to_string(i));
    } else {
      if (!(x >= 0.0f && x <= 1.0f))
        throw FormatError("probability value " + std::to_string(x) + " outside [0,1] at index " +
                          std::to_string(i));
    }
  }
}

inline std::string read_header_line(std::istream& in, const std::string& path) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path + ": truncated header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

inline std::string expect_key(const std::string& line, const std::string& key,
                              const std::string& path) {
  const std::string prefix = key + "=";
  if (line.rfind(prefix, 0) != 0)
    throw FormatError(path + ": expected '" + key + "=', got '" + line + "'");
  return line.substr(prefix.size());
}

}  // namespace detail

// Volume container: magic line, five text header keys in fixed order
// (version, kind, dims, dtype, order), then the raw payload. Scans and
// probability volumes store little-endian float32; masks store one byte
// per voxel. Round-trips are bit-exact.
inline void save_volume(const std::string& path, const Volume<float>& vol, VolumeKind kind) {
  detail::validate_payload(vol, kind);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open '" + path + "' for writing");
  out << "MIPSEGVOL\n";
  out << "version=1\n";
  out << "kind=" << kind_name(kind) << "\n";
  out << "dims=" << vol.a << ' ' << vol.b << ' ' << vol.c << "\n";
  out << "dtype=" << (kind == VolumeKind::Mask ? "u8" : "f32") << "\n";
  out << "order=a-major\n";
  if (kind == VolumeKind::Mask) {
    std::vector<std::uint8_t> bytes(vol.voxels.size());
    for (size_t i = 0; i < bytes.size(); ++i)
      bytes[i] = vol.voxels[i] != 0.0f ? std::uint8_t(1) : std::uint8_t(0);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
  } else {
    out.write(reinterpret_cast<const char*>(vol.voxels.data()),
              static_cast<std::streamsize>(vol.voxels.size() * sizeof(float)));
  }
  if (!out) throw FormatError("short write to '" + path + "'");
}

struct LoadedVolume {
  Volume<float> vol;
  VolumeKind kind = VolumeKind::Scan;
};

inline LoadedVolume load_volume(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "'");
  if (detail::read_header_line(in, path) != "MIPSEGVOL")
    throw FormatError(path + ": bad magic, not a volume file");
  if (detail::expect_key(detail::read_header_line(in, path), "version", path) != "1")
    throw FormatError(path + ": unsupported version");
  const VolumeKind kind =
      kind_from_name(detail::expect_key(detail::read_header_line(in, path), "kind", path));
  int a = 0, b = 0, c = 0;
  {
    std::istringstream ds(detail::expect_key(detail::read_header_line(in, path), "dims", path));
    if (!(ds >> a >> b >> c) || a < 1 || b < 1 || c < 1)
      throw FormatError(path + ": bad dims header");
  }
  const std::string dtype = detail::expect_key(detail::read_header_line(in, path), "dtype", path);
  const std::string want = kind == VolumeKind::Mask ? "u8" : "f32";
  if (dtype != want)
    throw FormatError(path + ": dtype '" + dtype + "' does not match kind '" +
                      std::string(kind_name(kind)) + "' (expected " + want + ")");
  if (detail::expect_key(detail::read_header_line(in, path), "order", path) != "a-major")
    throw FormatError(path + ": unsupported axis order");

  const std::streamoff payload_start = in.tellg();
  const long long n = static_cast<long long>(a) * b * c;
  const long long elem = kind == VolumeKind::Mask ? 1 : 4;
  LoadedVolume lv;
  lv.kind = kind;
  lv.vol = Volume<float>(a, b, c);
  std::vector<char> raw(static_cast<size_t>(n * elem));
  in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size()))
    throw FormatError(path + ": truncated payload, expected " + std::to_string(n * elem) +
                      " bytes at offset " + std::to_string(payload_start) + ", got " +
                      std::to_string(in.gcount()));
  char extra;
  if (in.read(&extra, 1))
    throw FormatError(path + ": trailing bytes after payload of " + std::to_string(n * elem) +
                      " bytes");
  if (kind == VolumeKind::Mask) {
    for (long long i = 0; i < n; ++i) {
      const std::uint8_t v = static_cast<std::uint8_t>(raw[static_cast<size_t>(i)]);
      if (v > 1)
        throw FormatError(path + ": mask value " + std::to_string(int(v)) +
                          " outside {0,1} at index " + std::to_string(i));
      lv.vol.voxels[static_cast<size_t>(i)] = static_cast<float>(v);
    }
  } else {
    std::memcpy(lv.vol.voxels.data(), raw.data(), raw.size());
    detail::validate_payload(lv.vol, kind);
  }
  return lv;
}

// Binary P5 graymap. With normalize the pixel range is min-max scaled,
// otherwise values are clamped from [0,1]. Quantization rounds to nearest.
inline void export_image_p5(const std::string& path, const Image<float>& img, bool normalize) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open '" + path + "' for writing");
  out << "P5\n" << img.c << ' ' << img.b << "\n255\n";
  float lo = img.pixels.empty() ? 0.0f : img.pixels[0];
  float hi = lo;
  if (normalize)
    for (float v : img.pixels) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  std::vector<std::uint8_t> bytes(img.pixels.size());
  for (size_t i = 0; i < img.pixels.size(); ++i) {
    float v = img.pixels[i];
    if (normalize)
      v = hi > lo ? (v - lo) / (hi - lo) : 0.0f;
    else
      v = std::clamp(v, 0.0f, 1.0f);
    bytes[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("short write to '" + path + "'");
}

// ---- datasets ----

template <typename T>
struct Sample {
  std::string name;
  Volume<T> scan;
  Volume<T> mask;
};

template <typename T>
using Dataset = std::vector<Sample<T>>;

inline std::vector<std::string> write_phantom_dataset(const std::string& dir, int n,
                                                      const PhantomSpec& spec,
                                                      std::uint64_t seed) {
  spec.validate();
  std::filesystem::create_directories(dir);
  std::ofstream index(dir + "/index.txt");
  if (!index) throw FormatError("cannot write '" + dir + "/index.txt'");
  std::vector<std::string> names;
  for (int i = 0; i < n; ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "phantom_%03d", i);
    Rng rng(Rng::derive(seed, static_cast<std::uint64_t>(i)));
    auto [scan, mask] = generate_phantom<float>(spec, rng);
    const std::string scan_file = std::string(name) + ".scan.vol";
    const std::string mask_file = std::string(name) + ".mask.vol";
    save_volume(dir + "/" + scan_file, scan, VolumeKind::Scan);
    save_volume(dir + "/" + mask_file, mask, VolumeKind::Mask);
    index << scan_file << ' ' << mask_file << '\n';
    names.push_back(name);
  }
  return names;
}

inline Dataset<float> load_dataset(const std::string& dir) {
  std::ifstream index(dir + "/index.txt");
  if (!index) throw FormatError("cannot open dataset index '" + dir + "/index.txt'");
  Dataset<float> out;
  std::string scan_file, mask_file;
  while (index >> scan_file >> mask_file) {
    Sample<float> s;
    s.name = scan_file.substr(0, scan_file.find('.'));
    LoadedVolume scan = load_volume(dir + "/" + scan_file);
    if (scan.kind == VolumeKind::Mask)
      throw FormatError(scan_file + ": expected a scan or probability volume");
    LoadedVolume mask = load_volume(dir + "/" + mask_file);
    if (mask.kind != VolumeKind::Mask) throw FormatError(mask_file + ": expected a mask volume");
    if (!scan.vol.same_dims(mask.vol))
      throw ShapeError(scan_file + " and " + mask_file + " have different dims");
    s.scan = std::move(scan.vol);
    s.mask = std::move(mask.vol);
    out.push_back(std::move(s));
  }
  if (out.empty()) throw FormatError("dataset index '" + dir + "/index.txt' lists no samples");
  return out;
}

// ---- checkpoints ----

namespace detail {

template <typename T>
const char* dtype_tag() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

inline std::string fmt_g17(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace detail

// Versioned text manifest (config echo, schedule position, counters, RNG
// state, named parameter shapes) followed by the concatenated raw parameter
// payload: current weights, best-epoch snapshot, then Adam moments.
template <typename T>
void save_checkpoint(const std::string& path, const Model25D<T>& model, const RunState<T>& state,
                     const TrainConfig& cfg) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open '" + path + "' for writing");
  std::ostringstream manifest;
  manifest << "MIPSEGCKPT\nversion=1\n";
  manifest << "dtype=" << detail::dtype_tag<T>() << "\n";
  for (const auto& [k, v] : config_to_kv(cfg)) manifest << "cfg." << k << '=' << v << '\n';
  manifest << "epoch=" << state.epoch << '\n';
  manifest << "balance_c=" << detail::fmt_g17(state.balance.c) << '\n';
  manifest << "balance_epoch=" << state.balance.epoch << '\n';
  manifest << "lr_current=" << detail::fmt_g17(state.lr) << '\n';
  manifest << "best_val=" << detail::fmt_g17(state.best_val) << '\n';
  manifest << "best_epoch=" << state.best_epoch << '\n';
  manifest << "plateau_count=" << state.plateau_count << '\n';
  manifest << "stop_count=" << state.stop_count << '\n';
  manifest << "stopped_early=" << (state.stopped_early ? 1 : 0) << '\n';
  manifest << "adam_t=" << state.adam.t << '\n';
  manifest << "rng=" << state.rng.serialize() << '\n';

  std::vector<std::pair<std::string, const std::vector<T>*>> entries;
  const auto named = model.named_params();
  for (const auto& [name, tensor] : named) {
    std::ostringstream line;
    line << "param " << name << ' ' << tensor.rank();
    for (int d : tensor.shape()) line << ' ' << d;
    entries.emplace_back(line.str(), &tensor.values());
  }
  if (!state.best_params.empty()) {
    if (state.best_params.size() != named.size())
      throw FormatError("best-weights snapshot does not match the parameter list");
    for (size_t i = 0; i < named.size(); ++i) {
      std::ostringstream line;
      line << "param best." << named[i].first << " 1 " << state.best_params[i].size();
      entries.emplace_back(line.str(), &state.best_params[i]);
    }
  }
  if (state.adam.t >= 0 && state.adam.m.size() == named.size()) {
    for (size_t i = 0; i < named.size(); ++i) {
      std::ostringstream line;
      line << "param adam.m." << named[i].first << " 1 " << state.adam.m[i].size();
      entries.emplace_back(line.str(), &state.adam.m[i]);
      std::ostringstream line2;
      line2 << "param adam.v." << named[i].first << " 1 " << state.adam.v[i].size();
      entries.emplace_back(line2.str(), &state.adam.v[i]);
    }
  }
  manifest << "params=" << entries.size() << '\n';
  long long payload_bytes = 0;
  for (const auto& [line, vec] : entries) {
    manifest << line << '\n';
    payload_bytes += static_cast<long long>(vec->size() * sizeof(T));
  }
  manifest << "payload_bytes=" << payload_bytes << '\n';
  out << manifest.str();
  for (const auto& [line, vec] : entries)
    out.write(reinterpret_cast<const char*>(vec->data()),
              static_cast<std::streamsize>(vec->size() * sizeof(T)));
  if (!out) throw FormatError("short write to '" + path + "'");
}

template <typename T>
struct LoadedCheckpoint {
  Model25D<T> model;
  RunState<T> state;
  TrainConfig cfg;
};

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "'");
  if (detail::read_header_line(in, path) != "MIPSEGCKPT")
    throw FormatError(path + ": bad magic, not a checkpoint");
  if (detail::expect_key(detail::read_header_line(in, path), "version", path) != "1")
    throw FormatError(path + ": unsupported checkpoint version");
  const std::string dtype = detail::expect_key(detail::read_header_line(in, path), "dtype", path);
  if (dtype != detail::dtype_tag<T>())
    throw FormatError(path + ": checkpoint dtype " + dtype + " does not match requested " +
                      detail::dtype_tag<T>());

  LoadedCheckpoint<T> ck;
  std::string line = detail::read_header_line(in, path);
  while (line.rfind("cfg.", 0) == 0) {
    const size_t eq = line.find('=');
    if (eq == std::string::npos) throw FormatError(path + ": bad config line '" + line + "'");
    config_set(ck.cfg, line.substr(4, eq - 4), line.substr(eq + 1));
    line = detail::read_header_line(in, path);
  }
  auto take = [&](const char* key) {
    const std::string v = detail::expect_key(line, key, path);
    line = detail::read_header_line(in, path);
    return v;
  };
  ck.state.epoch = std::stoi(take("epoch"));
  ck.state.balance.c = std::stod(take("balance_c"));
  ck.state.balance.epoch = std::stoi(take("balance_epoch"));
  ck.state.lr = std::stod(take("lr_current"));
  ck.state.best_val = std::stod(take("best_val"));
  ck.state.best_epoch = std::stoi(take("best_epoch"));
  ck.state.plateau_count = std::stoi(take("plateau_count"));
  ck.state.stop_count = std::stoi(take("stop_count"));
  ck.state.stopped_early = std::stoi(take("stopped_early")) != 0;
  ck.state.adam.t = std::stoll(take("adam_t"));
  ck.state.rng.deserialize(take("rng"));

  const int n_entries = std::stoi(detail::expect_key(line, "params", path));
  struct Entry {
    std::string name;
    Shape shape;
  };
  std::vector<Entry> entries;
  entries.reserve(n_entries);
  for (int i = 0; i < n_entries; ++i) {
    std::istringstream ls(detail::read_header_line(in, path));
    std::string tag, name;
    int rank = 0;
    if (!(ls >> tag >> name >> rank) || tag != "param" || rank < 1 || rank > 4)
      throw FormatError(path + ": bad param manifest line " + std::to_string(i));
    Entry e;
    e.name = name;
    e.shape.resize(rank);
    for (int d = 0; d < rank; ++d)
      if (!(ls >> e.shape[d]) || e.shape[d] < 1)
        throw FormatError(path + ": bad shape for param '" + name + "'");
    entries.push_back(std::move(e));
  }
  const long long payload_bytes =
      std::stoll(detail::expect_key(detail::read_header_line(in, path), "payload_bytes", path));
  long long expect = 0;
  for (const auto& e : entries) expect += numel(e.shape) * static_cast<long long>(sizeof(T));
  if (expect != payload_bytes)
    throw FormatError(path + ": manifest declares " + std::to_string(payload_bytes) +
                      " payload bytes but parameter shapes need " + std::to_string(expect));

  ck.cfg.validate();
  ck.model = make_model25d<T>(ck.cfg.unet(), ck.cfg.p, ck.cfg.m, ck.cfg.seed);
  const auto named = ck.model.named_params();

  std::vector<std::vector<T>> buffers;
  buffers.reserve(entries.size());
  const std::streamoff payload_start = in.tellg();
  long long offset = 0;
  for (const auto& e : entries) {
    std::vector<T> buf(static_cast<size_t>(numel(e.shape)));
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(T)));
    if (in.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(T)))
      throw FormatError(path + ": truncated payload for param '" + e.name + "' at offset " +
                        std::to_string(payload_start + offset));
    offset += static_cast<long long>(buf.size() * sizeof(T));
    buffers.push_back(std::move(buf));
  }
  char extra;
  if (in.read(&extra, 1)) throw FormatError(path + ": trailing bytes after payload");

  // Distribute entries onto the rebuilt model; any name or shape that does
  // not line up with the config echo is reported.
  std::vector<std::string> mismatches;
  auto find_named = [&](const std::string& want) -> const Tensor<T>* {
    for (const auto& [name, tensor] : named)
      if (name == want) return &tensor;
    return nullptr;
  };
  size_t best_seen = 0;
  std::vector<std::vector<T>> best(named.size());
  bool any_adam = false;
  ck.state.adam.m.assign(named.size(), {});
  ck.state.adam.v.assign(named.size(), {});
  auto named_index = [&](const std::string& want) -> int {
    for (size_t i = 0; i < named.size(); ++i)
      if (named[i].first == want) return static_cast<int>(i);
    return -1;
  };
  for (size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    auto& buf = buffers[i];
    if (e.name.rfind("best.", 0) == 0) {
      const int idx = named_index(e.name.substr(5));
      if (idx < 0 || named[idx].second.values().size() != buf.size())
        mismatches.push_back(e.name);
      else {
        best[idx] = std::move(buf);
        ++best_seen;
      }
    } else if (e.name.rfind("adam.m.", 0) == 0 || e.name.rfind("adam.v.", 0) == 0) {
      const bool is_m = e.name[5] == 'm';
      const int idx = named_index(e.name.substr(7));
      if (idx < 0 || named[idx].second.values().size() != buf.size())
        mismatches.push_back(e.name);
      else {
        (is_m ? ck.state.adam.m[idx] : ck.state.adam.v[idx]) = std::move(buf);
        any_adam = true;
      }
    } else {
      const Tensor<T>* t = find_named(e.name);
      if (t == nullptr || t->shape() != e.shape)
        mismatches.push_back(e.name);
      else
        t->mutable_values() = std::move(buf);
    }
  }
  if (!mismatches.empty()) {
    std::string list;
    for (const auto& n : mismatches) list += (list.empty() ? "" : ", ") + n;
    throw ShapeError("checkpoint '" + path + "' disagrees with its config for parameters: " +
                     list);
  }
  if (best_seen == named.size()) ck.state.best_params = std::move(best);
  if (!any_adam) {
    ck.state.adam.m.clear();
    ck.state.adam.v.clear();
  } else {
    for (size_t i = 0; i < named.size(); ++i)
      if (ck.state.adam.m[i].empty() || ck.state.adam.v[i].empty())
        throw FormatError(path + ": incomplete optimizer state");
  }
  return ck;
}

}  // namespace mipseg
