// Copyright 2026 The narmi Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Checkpoint file: a versioned plain-text manifest (meta values, then one
// line per tensor carrying name, shape, and byte offset) followed by a
// single binary section of little-endian 32-bit-float row-major blobs.
// Optimizer moments ride along as ordinary tensors under reserved name
// prefixes, so a run resumes with the exact training state.

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "narmi/adam.hpp"
#include "narmi/params.hpp"

namespace narmi {

constexpr const char* kCheckpointMagic = "narmi-ckpt-v1";

class CheckpointWriter {
 public:
  void add_meta(const std::string& key, std::int64_t value) {
    meta_.emplace_back(key, value);
  }

  void add_tensor(const std::string& name, const std::vector<int>& shape,
                  const std::vector<double>& data) {
    Entry e;
    e.name = name;
    e.shape = shape;
    e.offset = blob_.size();
    for (double v : data) {
      const float f = static_cast<float>(v);
      unsigned char bytes[4];
      std::memcpy(bytes, &f, 4);
      blob_.insert(blob_.end(), bytes, bytes + 4);
    }
    entries_.push_back(std::move(e));
  }

  void write(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write checkpoint " + path);
    f << kCheckpointMagic << '\n';
    for (const auto& [k, v] : meta_) f << "meta " << k << ' ' << v << '\n';
    for (const auto& e : entries_) {
      f << "param " << e.name << ' ' << e.shape.size();
      for (int d : e.shape) f << ' ' << d;
      f << ' ' << e.offset << '\n';
    }
    f << "blob\n";
    f.write(reinterpret_cast<const char*>(blob_.data()),
            static_cast<std::streamsize>(blob_.size()));
  }

 private:
  struct Entry {
    std::string name;
    std::vector<int> shape;
    std::size_t offset = 0;
  };
  std::vector<std::pair<std::string, std::int64_t>> meta_;
  std::vector<Entry> entries_;
  std::vector<unsigned char> blob_;
};

struct LoadedCheckpoint {
  struct Entry {
    std::vector<int> shape;
    std::vector<double> data;
  };
  std::vector<std::pair<std::string, std::int64_t>> meta;
  std::vector<std::pair<std::string, Entry>> tensors;
  std::map<std::string, std::size_t> index;

  bool has(const std::string& name) const { return index.count(name) != 0; }

  const Entry& at(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end())
      throw std::runtime_error("checkpoint load error: missing parameter " + name);
    return tensors[it->second].second;
  }

  std::int64_t meta_value(const std::string& key) const {
    for (const auto& [k, v] : meta) {
      if (k == key) return v;
    }
    throw std::runtime_error("checkpoint load error: missing meta key " + key);
  }
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read checkpoint " + path);
  std::string line;
  if (!std::getline(f, line) || line != kCheckpointMagic) {
    throw std::runtime_error("checkpoint " + path + " has unsupported header");
  }
  LoadedCheckpoint ckpt;
  struct Pending {
    std::string name;
    std::vector<int> shape;
    std::size_t offset;
    std::size_t numel;
  };
  std::vector<Pending> pending;
  while (std::getline(f, line)) {
    if (line == "blob") break;
    std::istringstream ss(line);
    std::string kind;
    ss >> kind;
    if (kind == "meta") {
      std::string key;
      std::int64_t value;
      if (!(ss >> key >> value))
        throw std::runtime_error("checkpoint " + path + ": malformed meta line");
      ckpt.meta.emplace_back(key, value);
    } else if (kind == "param") {
      Pending p;
      std::size_t rank;
      if (!(ss >> p.name >> rank))
        throw std::runtime_error("checkpoint " + path + ": malformed param line");
      p.shape.resize(rank);
      p.numel = 1;
      for (auto& d : p.shape) {
        if (!(ss >> d) || d < 0)
          throw std::runtime_error("checkpoint " + path + ": bad shape for " + p.name);
        p.numel *= static_cast<std::size_t>(d);
      }
      if (!(ss >> p.offset))
        throw std::runtime_error("checkpoint " + path + ": missing offset for " + p.name);
      pending.push_back(std::move(p));
    } else {
      throw std::runtime_error("checkpoint " + path + ": unknown manifest line '" + line + "'");
    }
  }
  std::vector<unsigned char> blob((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  for (auto& p : pending) {
    if (p.offset + 4 * p.numel > blob.size()) {
      throw std::runtime_error("checkpoint " + path + ": blob too short for " + p.name);
    }
    LoadedCheckpoint::Entry e;
    e.shape = p.shape;
    e.data.resize(p.numel);
    for (std::size_t i = 0; i < p.numel; ++i) {
      float v;
      std::memcpy(&v, blob.data() + p.offset + 4 * i, 4);
      e.data[i] = static_cast<double>(v);
    }
    ckpt.index[p.name] = ckpt.tensors.size();
    ckpt.tensors.emplace_back(p.name, std::move(e));
  }
  return ckpt;
}

// ---------------------------------------------------------------------------
// ParamSet and optimizer state round trips
// ---------------------------------------------------------------------------

inline void checkpoint_add_params(CheckpointWriter& w, const std::string& prefix,
                                  const ParamSet& params, const Adam* opt = nullptr) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    w.add_tensor(prefix + "." + params.name(i), params.tensor(i).shape(),
                 params.tensor(i).value());
  }
  if (opt) {
    Adam* mutable_opt = const_cast<Adam*>(opt);
    for (std::size_t i = 0; i < params.size(); ++i) {
      w.add_tensor(prefix + ".adam.m." + params.name(i), params.tensor(i).shape(),
                   mutable_opt->first_moment(i));
      w.add_tensor(prefix + ".adam.v." + params.name(i), params.tensor(i).shape(),
                   mutable_opt->second_moment(i));
    }
    w.add_meta(prefix + ".adam.step", opt->step_count());
  }
}

inline void checkpoint_load_params(const LoadedCheckpoint& ckpt, const std::string& prefix,
                                   ParamSet& params, Adam* opt = nullptr) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string name = prefix + "." + params.name(i);
    const auto& e = ckpt.at(name);
    Tensor& t = params.tensor(i);
    if (e.shape != t.shape()) {
      throw std::runtime_error("checkpoint load error: shape mismatch for " + name +
                               " (file " + detail::shape_str(e.shape) + ", model " +
                               detail::shape_str(t.shape()) + ")");
    }
    t.value() = e.data;
  }
  if (opt) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      opt->first_moment(i) = ckpt.at(prefix + ".adam.m." + params.name(i)).data;
      opt->second_moment(i) = ckpt.at(prefix + ".adam.v." + params.name(i)).data;
    }
    opt->set_step_count(ckpt.meta_value(prefix + ".adam.step"));
  }
}

// Rounds the in-memory training state to checkpoint (fp32) precision. Runs
// right after every save so a resumed process continues from numerically
// identical state and reproduces the original trajectory.
inline void quantize_to_checkpoint_precision(ParamSet& params, Adam* opt = nullptr) {
  auto snap = [](std::vector<double>& v) {
    for (double& x : v) x = static_cast<double>(static_cast<float>(x));
  };
  for (std::size_t i = 0; i < params.size(); ++i) snap(params.tensor(i).value());
  if (opt) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      snap(opt->first_moment(i));
      snap(opt->second_moment(i));
    }
  }
}

}  // namespace narmi
