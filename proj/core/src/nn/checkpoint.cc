// Copyright 2026 The CPR Sandbox Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "cpr/nn/checkpoint.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cpr/error.h"

namespace cpr::nn {
namespace {

constexpr char kMagic[] = "CPRNN-CHECKPOINT 1";

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are written in host byte order");

void append_tree(nlohmann::json& table, std::string& payload, const ParamTree& tree,
                 const std::string& group) {
  for (const auto& [name, m] : tree) {
    table.push_back({{"group", group}, {"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
    payload.append(reinterpret_cast<const char*>(m.data()),
                   static_cast<size_t>(m.size()) * sizeof(double));
  }
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json header;
  header["descriptor"] = ckpt.descriptor;
  header["step"] = ckpt.step;
  nlohmann::json table = nlohmann::json::array();
  std::string payload;
  append_tree(table, payload, ckpt.params, "params");
  if (ckpt.optimizer) {
    const OptimizerState& o = *ckpt.optimizer;
    header["optimizer"] = {{"step", o.step},
                           {"schedule", schedule_to_json(o.schedule)},
                           {"beta1", o.beta1},
                           {"beta2", o.beta2},
                           {"epsilon", o.epsilon}};
    append_tree(table, payload, o.m, "m");
    append_tree(table, payload, o.v, "v");
  }
  header["tensors"] = std::move(table);
  std::string out = kMagic;
  out += '\n';
  out += header.dump();
  out += '\n';
  out += payload;
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  const size_t magic_end = bytes.find('\n');
  if (magic_end == std::string::npos || bytes.compare(0, magic_end, kMagic) != 0) {
    throw Error(ErrorCode::kMalformedRecord, "not a checkpoint (bad magic)");
  }
  const size_t header_end = bytes.find('\n', magic_end + 1);
  if (header_end == std::string::npos) {
    throw Error(ErrorCode::kMalformedRecord, "checkpoint header truncated");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(magic_end + 1, header_end - magic_end - 1));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kMalformedRecord, std::string("checkpoint header: ") + e.what());
  }
  Checkpoint ckpt;
  ParamTree m, v;
  try {
    ckpt.descriptor = header.at("descriptor");
    ckpt.step = header.at("step").get<int64_t>();
    size_t offset = header_end + 1;
    for (const auto& entry : header.at("tensors")) {
      const auto rows = entry.at("rows").get<Eigen::Index>();
      const auto cols = entry.at("cols").get<Eigen::Index>();
      const size_t n = static_cast<size_t>(rows * cols) * sizeof(double);
      if (offset + n > bytes.size()) {
        throw Error(ErrorCode::kMalformedRecord, "checkpoint payload truncated");
      }
      Matrix mat(rows, cols);
      std::memcpy(mat.data(), bytes.data() + offset, n);
      offset += n;
      const std::string group = entry.at("group").get<std::string>();
      const std::string name = entry.at("name").get<std::string>();
      if (group == "params") ckpt.params.add(name, std::move(mat));
      else if (group == "m") m.add(name, std::move(mat));
      else if (group == "v") v.add(name, std::move(mat));
      else throw Error(ErrorCode::kMalformedRecord, "unknown tensor group '" + group + "'");
    }
    if (offset != bytes.size()) {
      throw Error(ErrorCode::kMalformedRecord, "trailing bytes after checkpoint payload");
    }
    if (header.contains("optimizer")) {
      const auto& o = header["optimizer"];
      OptimizerState state;
      state.step = o.at("step").get<int64_t>();
      state.schedule = schedule_from_json(o.at("schedule"));
      state.beta1 = o.at("beta1").get<double>();
      state.beta2 = o.at("beta2").get<double>();
      state.epsilon = o.at("epsilon").get<double>();
      state.m = std::move(m);
      state.v = std::move(v);
      ckpt.optimizer = std::move(state);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kMalformedRecord, std::string("checkpoint header: ") + e.what());
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  const std::string bytes = serialize_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kMissingArtifact, "cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return deserialize_checkpoint(buffer.str());
}

void validate_shapes(const ParamTree& expected, const ParamTree& loaded) {
  if (expected.size() != loaded.size()) {
    throw Error(ErrorCode::kShapeMismatch, "checkpoint has " + std::to_string(loaded.size()) +
                                               " tensors, architecture expects " +
                                               std::to_string(expected.size()));
  }
  auto it = loaded.begin();
  for (const auto& [name, m] : expected) {
    const auto& [lname, lm] = *it++;
    if (name != lname || m.rows() != lm.rows() || m.cols() != lm.cols()) {
      throw Error(ErrorCode::kShapeMismatch,
                  "tensor '" + lname + "' (" + std::to_string(lm.rows()) + "x" +
                      std::to_string(lm.cols()) + ") does not match '" + name + "' (" +
                      std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ")");
    }
  }
}

}  // namespace cpr::nn
