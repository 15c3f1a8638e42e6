#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mcmim/config.hpp"
#include "mcmim/errors.hpp"
#include "mcmim/tokenizer.hpp"
#include "mcmim/train.hpp"
#include "mcmim/vit.hpp"

namespace mcmim {

// Self-describing single-file checkpoint: a text manifest (format version,
// config snapshot, step, rng state, tensor table) followed by concatenated
// little-endian float32 tensor data. Every tensor in ModelParams and the
// Codebook appears exactly once; optimizer moments are stored under
// adam.m.* / adam.v.*.
//
//   mcmim-checkpoint v1
//   step <n>
//   rng <engine state | ->
//   config.begin ... config.end
//   tensors <count>
//   <name> f32 <rows> <cols> <byte offset>
//   blob <nbytes>
//   <raw data>

constexpr const char* kCheckpointMagic = "mcmim-checkpoint";
constexpr const char* kCheckpointVersion = "v1";

namespace detail {

inline void require_little_endian() {
  if constexpr (std::endian::native != std::endian::little)
    throw FormatError("checkpoint: only little-endian hosts are supported");
}

struct TensorEntry {
  std::string name;
  int rows = 0;
  int cols = 0;
  size_t offset = 0;
};

inline void write_tensor_data(std::string& blob, const Matrix<float>& m) {
  const size_t bytes = m.size() * sizeof(float);
  const size_t at = blob.size();
  blob.resize(at + bytes);
  std::memcpy(blob.data() + at, m.data.data(), bytes);
}

}  // namespace detail

inline void write_checkpoint_stream(std::ostream& out, const TrainConfig& cfg,
                                    const TrainState<float>& state) {
  detail::require_little_endian();
  std::vector<detail::TensorEntry> entries;
  std::string blob;
  auto add = [&](const std::string& name, const Matrix<float>& m) {
    entries.push_back({name, m.rows, m.cols, blob.size()});
    detail::write_tensor_data(blob, m);
  };
  for_each_tensor(state.params,
                  [&](const std::string& n, const Matrix<float>& m, bool) { add(n, m); });
  add("codebook.codes", state.codebook.codes);
  Matrix<float> norm(1, 2);
  norm.data = {state.codebook.input_mean, state.codebook.input_scale};
  add("codebook.norm", norm);
  for_each_tensor(state.opt.m, [&](const std::string& n, const Matrix<float>& m, bool) {
    add("adam.m." + n, m);
  });
  for_each_tensor(state.opt.v, [&](const std::string& n, const Matrix<float>& m, bool) {
    add("adam.v." + n, m);
  });

  out << kCheckpointMagic << " " << kCheckpointVersion << "\n";
  out << "step " << state.step << "\n";
  out << "rng " << state.rng.serialize() << "\n";
  out << "config.begin\n";
  for (const auto& [k, v] : config_key_values(cfg)) out << k << " " << v << "\n";
  out << "config.end\n";
  out << "tensors " << entries.size() << "\n";
  for (const auto& e : entries)
    out << e.name << " f32 " << e.rows << " " << e.cols << " " << e.offset << "\n";
  out << "blob " << blob.size() << "\n";
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
}

inline void save_checkpoint(const TrainConfig& cfg, const TrainState<float>& state,
                            const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  write_checkpoint_stream(out, cfg, state);
  if (!out) throw IoError("checkpoint write failed: " + path);
}

// Codebook-only export in the same manifest+blob layout.
inline void save_codebook(const TrainConfig& cfg, const Codebook<float>& cb,
                          const std::string& path) {
  detail::require_little_endian();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write codebook: " + path);
  std::string blob;
  detail::write_tensor_data(blob, cb.codes);
  Matrix<float> norm(1, 2);
  norm.data = {cb.input_mean, cb.input_scale};
  const size_t norm_offset = blob.size();
  detail::write_tensor_data(blob, norm);
  out << kCheckpointMagic << " " << kCheckpointVersion << "\n";
  out << "step 0\n";
  out << "rng -\n";
  out << "config.begin\n";
  for (const auto& [k, v] : config_key_values(cfg)) out << k << " " << v << "\n";
  out << "config.end\n";
  out << "tensors 2\n";
  out << "codebook.codes f32 " << cb.codes.rows << " " << cb.codes.cols << " 0\n";
  out << "codebook.norm f32 1 2 " << norm_offset << "\n";
  out << "blob " << blob.size() << "\n";
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
}

struct LoadedCheckpoint {
  TrainConfig cfg;
  TrainState<float> state;
  std::vector<detail::TensorEntry> entries;
};

namespace detail {

struct ParsedManifest {
  int64_t step = 0;
  std::string rng_state;
  std::string config_text;
  std::vector<TensorEntry> entries;
  std::string blob;
};

inline ParsedManifest parse_checkpoint_stream(std::istream& in) {
  require_little_endian();
  ParsedManifest pm;
  std::string line;
  if (!std::getline(in, line)) throw FormatError("checkpoint: empty file");
  {
    std::istringstream ls(line);
    std::string magic, version;
    ls >> magic >> version;
    if (magic != kCheckpointMagic) throw FormatError("checkpoint: bad magic line");
    if (version != kCheckpointVersion)
      throw FormatError("checkpoint: version mismatch, expected " +
                        std::string(kCheckpointVersion) + " got " + version);
  }
  if (!std::getline(in, line) || line.rfind("step ", 0) != 0)
    throw FormatError("checkpoint: missing step line");
  pm.step = std::stoll(line.substr(5));
  if (!std::getline(in, line) || line.rfind("rng ", 0) != 0)
    throw FormatError("checkpoint: missing rng line");
  pm.rng_state = line.substr(4);
  if (!std::getline(in, line) || line != "config.begin")
    throw FormatError("checkpoint: missing config block");
  std::ostringstream cfg_text;
  while (std::getline(in, line) && line != "config.end") cfg_text << line << "\n";
  if (line != "config.end") throw FormatError("checkpoint: unterminated config block");
  pm.config_text = cfg_text.str();
  if (!std::getline(in, line) || line.rfind("tensors ", 0) != 0)
    throw FormatError("checkpoint: missing tensor table");
  const int count = std::stoi(line.substr(8));
  for (int i = 0; i < count; ++i) {
    if (!std::getline(in, line)) throw FormatError("checkpoint: truncated tensor table");
    std::istringstream ls(line);
    TensorEntry e;
    std::string dtype;
    unsigned long long off = 0;
    ls >> e.name >> dtype >> e.rows >> e.cols >> off;
    if (!ls || dtype != "f32")
      throw FormatError("checkpoint: malformed tensor entry: " + line);
    e.offset = static_cast<size_t>(off);
    pm.entries.push_back(e);
  }
  if (!std::getline(in, line) || line.rfind("blob ", 0) != 0)
    throw FormatError("checkpoint: missing blob header");
  const size_t nbytes = static_cast<size_t>(std::stoull(line.substr(5)));
  pm.blob.resize(nbytes);
  in.read(pm.blob.data(), static_cast<std::streamsize>(nbytes));
  if (static_cast<size_t>(in.gcount()) != nbytes)
    throw FormatError("checkpoint: blob truncated: expected " + std::to_string(nbytes) +
                      " bytes, found " + std::to_string(in.gcount()));
  in.peek();
  if (!in.eof()) throw FormatError("checkpoint: trailing bytes after blob");
  // validate offsets
  for (const auto& e : pm.entries) {
    const size_t bytes = static_cast<size_t>(e.rows) * e.cols * sizeof(float);
    if (e.offset + bytes > nbytes)
      throw FormatError("checkpoint: tensor '" + e.name + "' offset overrun: " +
                        std::to_string(e.offset) + "+" + std::to_string(bytes) + " > " +
                        std::to_string(nbytes));
  }
  return pm;
}

inline void fill_tensor(const ParsedManifest& pm, const TensorEntry& e, Matrix<float>& dst) {
  if (dst.rows != e.rows || dst.cols != e.cols)
    throw FormatError("checkpoint: tensor '" + e.name + "' shape " +
                      std::to_string(e.rows) + "x" + std::to_string(e.cols) +
                      " does not match model shape " + std::to_string(dst.rows) + "x" +
                      std::to_string(dst.cols));
  std::memcpy(dst.data.data(), pm.blob.data() + e.offset, dst.size() * sizeof(float));
}

}  // namespace detail

inline LoadedCheckpoint load_checkpoint_stream(std::istream& in) {
  const detail::ParsedManifest pm = detail::parse_checkpoint_stream(in);
  LoadedCheckpoint out;
  out.cfg = parse_config_text(pm.config_text);
  out.entries = pm.entries;
  out.state.step = pm.step;
  out.state.params = make_params_shell<float>(out.cfg.arch());
  out.state.opt.m = zeros_like(out.state.params);
  out.state.opt.v = zeros_like(out.state.params);
  out.state.opt.step = pm.step;
  if (pm.rng_state != "-") out.state.rng.deserialize(pm.rng_state);

  // name -> destination map, every expected tensor exactly once
  std::vector<std::pair<std::string, Matrix<float>*>> dests;
  for_each_tensor(out.state.params, [&](const std::string& n, Matrix<float>& m, bool) {
    dests.emplace_back(n, &m);
  });
  for_each_tensor(out.state.opt.m, [&](const std::string& n, Matrix<float>& m, bool) {
    dests.emplace_back("adam.m." + n, &m);
  });
  for_each_tensor(out.state.opt.v, [&](const std::string& n, Matrix<float>& m, bool) {
    dests.emplace_back("adam.v." + n, &m);
  });
  std::vector<bool> seen(dests.size(), false);
  bool codebook_seen = false;
  bool norm_seen = false;
  for (const auto& e : pm.entries) {
    if (e.name == "codebook.codes") {
      if (codebook_seen) throw FormatError("checkpoint: duplicate tensor codebook.codes");
      codebook_seen = true;
      out.state.codebook.codes = Matrix<float>(e.rows, e.cols);
      detail::fill_tensor(pm, e, out.state.codebook.codes);
      continue;
    }
    if (e.name == "codebook.norm") {
      if (norm_seen) throw FormatError("checkpoint: duplicate tensor codebook.norm");
      norm_seen = true;
      Matrix<float> norm(e.rows, e.cols);
      detail::fill_tensor(pm, e, norm);
      if (norm.size() != 2) throw FormatError("checkpoint: codebook.norm must be 1x2");
      out.state.codebook.input_mean = norm.data[0];
      out.state.codebook.input_scale = norm.data[1];
      continue;
    }
    bool matched = false;
    for (size_t i = 0; i < dests.size(); ++i) {
      if (dests[i].first == e.name) {
        if (seen[i]) throw FormatError("checkpoint: duplicate tensor " + e.name);
        seen[i] = true;
        detail::fill_tensor(pm, e, *dests[i].second);
        matched = true;
        break;
      }
    }
    if (!matched) throw FormatError("checkpoint: unknown tensor '" + e.name + "'");
  }
  if (!codebook_seen) throw FormatError("checkpoint: missing tensor codebook.codes");
  if (!norm_seen) throw FormatError("checkpoint: missing tensor codebook.norm");
  for (size_t i = 0; i < dests.size(); ++i)
    if (!seen[i]) throw FormatError("checkpoint: missing tensor '" + dests[i].first + "'");
  return out;
}

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint: " + path);
  return load_checkpoint_stream(in);
}

// Reads just the codebook from a full checkpoint or a standalone export.
inline Codebook<float> load_codebook(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read codebook: " + path);
  const detail::ParsedManifest pm = detail::parse_checkpoint_stream(in);
  Codebook<float> cb;
  bool codes_seen = false;
  for (const auto& e : pm.entries) {
    if (e.name == "codebook.codes") {
      cb.codes = Matrix<float>(e.rows, e.cols);
      detail::fill_tensor(pm, e, cb.codes);
      codes_seen = true;
    } else if (e.name == "codebook.norm") {
      Matrix<float> norm(e.rows, e.cols);
      detail::fill_tensor(pm, e, norm);
      if (norm.size() != 2) throw FormatError("checkpoint: codebook.norm must be 1x2");
      cb.input_mean = norm.data[0];
      cb.input_scale = norm.data[1];
    }
  }
  if (!codes_seen) throw FormatError("checkpoint: missing tensor codebook.codes");
  return cb;
}

}  // namespace mcmim
