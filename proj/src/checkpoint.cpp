/*
 * Copyright 2026 The dakd Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "dakd/models.hpp"

namespace dakd {

namespace {

constexpr const char* kFormat = "dakd-checkpoint";
constexpr int kVersion = 1;

std::uint32_t to_little_endian(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
  return v;
}

}  // namespace

std::filesystem::path checkpoint_blob_path(const std::filesystem::path& header) {
  auto blob = header;
  blob.replace_extension(".bin");
  return blob;
}

void save_checkpoint(const std::filesystem::path& header, const Checkpoint& ckpt) {
  if (header.has_parent_path()) std::filesystem::create_directories(header.parent_path());
  const auto blob_path = checkpoint_blob_path(header);

  nlohmann::json tensors = nlohmann::json::array();
  std::vector<char> blob;
  for (const auto& t : ckpt.params.tensors) {
    tensors.push_back({{"name", t.name}, {"shape", t.shape}, {"dtype", "float32"}, {"offset", blob.size()}});
    const std::size_t start = blob.size();
    blob.resize(start + t.value.size() * sizeof(std::uint32_t));
    for (std::size_t i = 0; i < t.value.size(); ++i) {
      const std::uint32_t le = to_little_endian(std::bit_cast<std::uint32_t>(t.value[i]));
      std::memcpy(blob.data() + start + i * sizeof(le), &le, sizeof(le));
    }
  }

  nlohmann::json head = {{"format", kFormat},
                         {"version", kVersion},
                         {"iteration", ckpt.params.iteration},
                         {"config", ckpt.config},
                         {"blob", blob_path.filename().string()},
                         {"blob_bytes", blob.size()},
                         {"tensors", tensors}};

  std::ofstream bout(blob_path, std::ios::binary);
  if (!bout) throw std::runtime_error("cannot open " + blob_path.string() + " for writing");
  bout.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!bout) throw std::runtime_error("failed writing " + blob_path.string());

  std::ofstream hout(header);
  if (!hout) throw std::runtime_error("cannot open " + header.string() + " for writing");
  hout << head.dump(2) << '\n';
  if (!hout) throw std::runtime_error("failed writing " + header.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& header) {
  std::ifstream hin(header);
  if (!hin) throw std::runtime_error("cannot open checkpoint " + header.string());
  nlohmann::json head;
  try {
    hin >> head;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("checkpoint header " + header.string() + " is not valid JSON: " + e.what());
  }
  if (head.value("format", "") != kFormat) throw std::runtime_error(header.string() + " is not a dakd checkpoint");

  const auto blob_path = header.parent_path() / head.at("blob").get<std::string>();
  std::ifstream bin(blob_path, std::ios::binary);
  if (!bin) throw std::runtime_error("cannot open checkpoint blob " + blob_path.string());
  std::vector<char> blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  if (blob.size() != head.at("blob_bytes").get<std::size_t>()) {
    throw std::runtime_error("checkpoint blob " + blob_path.string() + " has unexpected size");
  }

  Checkpoint ckpt;
  ckpt.config = head.at("config");
  ckpt.params.iteration = head.at("iteration").get<int>();
  for (const auto& t : head.at("tensors")) {
    if (t.at("dtype").get<std::string>() != "float32") throw std::runtime_error("unsupported tensor dtype");
    nn::Parameter p;
    p.name = t.at("name").get<std::string>();
    p.shape = t.at("shape").get<std::vector<int>>();
    std::size_t count = 1;
    for (int d : p.shape) count *= static_cast<std::size_t>(d);
    const auto offset = t.at("offset").get<std::size_t>();
    if (offset + count * sizeof(std::uint32_t) > blob.size()) {
      throw std::runtime_error("tensor '" + p.name + "' extends past the end of the blob");
    }
    p.value.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      std::uint32_t le;
      std::memcpy(&le, blob.data() + offset + i * sizeof(le), sizeof(le));
      p.value[i] = std::bit_cast<float>(to_little_endian(le));
    }
    ckpt.params.tensors.push_back(std::move(p));
  }
  return ckpt;
}

}  // namespace dakd
