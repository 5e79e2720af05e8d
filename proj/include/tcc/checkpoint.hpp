#pragma once

// Checkpoint files.
//
// Line-oriented text, LF endings:
//
//   tcc-checkpoint 1
//   config <key> = <value>            one line per TrainConfig field
//   meta <key> <value>                integers (epoch, step, sizes, ...)
//   array <name> <rows> <cols>        header, followed by exactly one line
//   <v0> <v1> ...                     of rows*cols values in C99 hex-float
//   end
//
// Hex floats ("%a") make the round trip bit-exact for every double.
// Array names: online/<param>, online.m1/<param>, online.m2/<param>,
// momentum/<param>, queue.cluster, queue.instance, history.

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "tcc/config.hpp"
#include "tcc/trainer.hpp"

namespace tcc {

inline constexpr const char* kCheckpointTag = "tcc-checkpoint";
inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline std::string hex_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

inline void write_array(std::ostream& out, const std::string& name, const DenseArray& a) {
  out << "array " << name << ' ' << a.rows() << ' ' << a.cols() << '\n';
  auto d = a.data();
  for (std::size_t i = 0; i < d.size(); ++i) out << (i ? " " : "") << hex_double(d[i]);
  out << '\n';
}

struct CheckpointContents {
  std::vector<std::pair<std::string, std::string>> config;
  std::map<std::string, std::uint64_t> meta;
  std::map<std::string, DenseArray> arrays;
};

inline CheckpointContents read_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  CheckpointContents c;
  std::string line;
  std::size_t lineno = 0;
  auto next = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++lineno;
    return true;
  };
  if (!next()) throw ParseError("checkpoint: empty file", 1);
  {
    std::istringstream ss(line);
    std::string tag;
    int version = 0;
    ss >> tag >> version;
    if (tag != kCheckpointTag) throw ParseError("checkpoint: missing format tag", lineno);
    if (version != kCheckpointVersion) {
      throw ParseError("checkpoint: unsupported version " + std::to_string(version), lineno);
    }
  }
  bool ended = false;
  while (next()) {
    if (line == "end") {
      ended = true;
      break;
    }
    std::istringstream ss(line);
    std::string kind;
    ss >> kind;
    if (kind == "config") {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ParseError("checkpoint: bad config line", lineno);
      c.config.emplace_back(trim(line.substr(7, eq - 7)), trim(line.substr(eq + 1)));
    } else if (kind == "meta") {
      std::string key;
      std::uint64_t v = 0;
      if (!(ss >> key >> v)) throw ParseError("checkpoint: bad meta line", lineno);
      c.meta[key] = v;
    } else if (kind == "array") {
      std::string name;
      std::size_t rows = 0, cols = 0;
      if (!(ss >> name >> rows >> cols)) throw ParseError("checkpoint: bad array header", lineno);
      if (!next()) throw ParseError("checkpoint: truncated array " + name, lineno);
      std::vector<double> values;
      values.reserve(rows * cols);
      const char* p = line.c_str();
      while (*p) {
        while (*p == ' ') ++p;
        if (!*p) break;
        char* end = nullptr;
        errno = 0;
        const double v = std::strtod(p, &end);
        if (end == p || errno == ERANGE) throw ParseError("checkpoint: bad value in " + name, lineno);
        values.push_back(v);
        p = end;
      }
      if (values.size() != rows * cols) {
        throw ParseError("checkpoint: array " + name + " has " + std::to_string(values.size()) +
                             " values, expected " + std::to_string(rows * cols), lineno);
      }
      c.arrays[name] = DenseArray(rows, cols, std::move(values));
    } else if (!kind.empty()) {
      throw ParseError("checkpoint: unknown record '" + kind + "'", lineno);
    }
  }
  if (!ended) throw ParseError("checkpoint: missing end marker", lineno);
  return c;
}

inline const DenseArray& need_array(const CheckpointContents& c, const std::string& name) {
  auto it = c.arrays.find(name);
  if (it == c.arrays.end()) throw ParseError("checkpoint: missing array " + name);
  return it->second;
}

inline std::uint64_t need_meta(const CheckpointContents& c, const std::string& key) {
  auto it = c.meta.find(key);
  if (it == c.meta.end()) throw ParseError("checkpoint: missing meta " + key);
  return it->second;
}

}  // namespace detail

inline void save_checkpoint(const TrainState& s, const std::string& path) {
  std::ostringstream out;
  out << kCheckpointTag << ' ' << kCheckpointVersion << '\n';
  for (const auto& key : config_keys()) out << "config " << key << " = " << get_config_value(s.config, key) << '\n';
  out << "meta input_dim " << s.online.config().input_dim << '\n';
  out << "meta epoch " << s.epoch << '\n';
  out << "meta step " << s.step << '\n';
  out << "meta adam_step " << s.online.params().step << '\n';
  out << "meta converged " << (s.converged ? 1 : 0) << '\n';
  out << "meta batch " << s.sizes.batch << '\n';
  out << "meta cluster_queue_capacity " << s.sizes.cluster_queue << '\n';
  out << "meta instance_queue_capacity " << s.sizes.instance_queue << '\n';
  out << "meta cluster_queue_count " << s.cluster_queue.raw().size() << '\n';
  out << "meta cluster_queue_cursor " << s.cluster_queue.raw().cursor() << '\n';
  out << "meta instance_queue_count " << s.instance_queue.size() << '\n';
  out << "meta instance_queue_cursor " << s.instance_queue.cursor() << '\n';
  for (const auto& [name, p] : s.online.params()) {
    detail::write_array(out, "online/" + name, p.value);
    detail::write_array(out, "online.m1/" + name, p.first_moment);
    detail::write_array(out, "online.m2/" + name, p.second_moment);
  }
  for (const auto& [name, p] : s.momentum.params()) detail::write_array(out, "momentum/" + name, p.value);
  detail::write_array(out, "queue.cluster", s.cluster_queue.raw().storage());
  detail::write_array(out, "queue.instance", s.instance_queue.storage());
  detail::write_array(out, "history", DenseArray(1, s.epoch_losses.size(), s.epoch_losses));
  out << "end\n";

  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write checkpoint " + path);
  f << out.str();
  if (!f) throw DataError("write failed for checkpoint " + path);
}

inline TrainState load_checkpoint(const std::string& path) {
  const auto c = detail::read_checkpoint_file(path);
  TrainState s;
  for (const auto& [k, v] : c.config) set_config_value(s.config, k, v);
  s.config.validate();
  const EncoderConfig ec = s.config.encoder_config(detail::need_meta(c, "input_dim"));

  auto load_encoder = [&](const std::string& prefix, bool with_moments) {
    Encoder reference = Encoder::initialize(ec, 0);
    ParameterStore store;
    for (const auto& [name, p] : reference.params()) {
      Parameter& q = store.add(name, detail::need_array(c, prefix + "/" + name));
      if (with_moments) {
        q.first_moment = detail::need_array(c, prefix + ".m1/" + name);
        q.second_moment = detail::need_array(c, prefix + ".m2/" + name);
        if (!q.first_moment.same_shape(q.value) || !q.second_moment.same_shape(q.value)) {
          throw ParseError("checkpoint: moment shape mismatch for " + name);
        }
      }
    }
    return Encoder::from_store(ec, std::move(store));
  };
  s.online = load_encoder("online", true);
  s.online.params().step = detail::need_meta(c, "adam_step");
  s.momentum = load_encoder("momentum", false);

  s.epoch = detail::need_meta(c, "epoch");
  s.step = detail::need_meta(c, "step");
  s.converged = detail::need_meta(c, "converged") != 0;
  s.sizes.batch = detail::need_meta(c, "batch");
  s.sizes.cluster_queue = detail::need_meta(c, "cluster_queue_capacity");
  s.sizes.instance_queue = detail::need_meta(c, "instance_queue_capacity");
  s.cluster_queue = ClusterQueue(s.sizes.cluster_queue, s.config.clusters, s.config.feature_dim);
  s.cluster_queue.raw().restore(detail::need_array(c, "queue.cluster"),
                                detail::need_meta(c, "cluster_queue_count"),
                                detail::need_meta(c, "cluster_queue_cursor"));
  s.instance_queue = InstanceQueue(s.sizes.instance_queue, s.config.feature_dim);
  s.instance_queue.restore(detail::need_array(c, "queue.instance"),
                           detail::need_meta(c, "instance_queue_count"),
                           detail::need_meta(c, "instance_queue_cursor"));
  const DenseArray& h = detail::need_array(c, "history");
  s.epoch_losses.assign(h.data().begin(), h.data().end());
  return s;
}

}  // namespace tcc
