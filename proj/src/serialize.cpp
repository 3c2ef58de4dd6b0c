#include "daclab/serialize.hpp"

#include <cstring>
#include <fstream>
#include <json.hpp>
#include <stdexcept>

#include "daclab/util.hpp"

namespace daclab {

namespace {

using nlohmann::json;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(std::uint8_t(v & 0xff));
  out.push_back(std::uint8_t((v >> 8) & 0xff));
  out.push_back(std::uint8_t((v >> 16) & 0xff));
  out.push_back(std::uint8_t((v >> 24) & 0xff));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}

void put_f32(std::vector<std::uint8_t>& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

float get_f32(const std::uint8_t* p) {
  std::uint32_t bits = get_u32(p);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

json arch_to_json(const ArchSpec& spec) {
  return json{{"kind", spec.kind == ArchSpec::Kind::mlp ? "mlp" : "smallcnn"},
              {"in_c", spec.in_c},
              {"in_h", spec.in_h},
              {"in_w", spec.in_w},
              {"hidden", spec.hidden},
              {"taps", spec.taps},
              {"head_width", spec.head_width}};
}

ArchSpec arch_from_json(const json& j) {
  ArchSpec spec;
  std::string kind = j.at("kind").get<std::string>();
  if (kind == "mlp") {
    spec.kind = ArchSpec::Kind::mlp;
  } else if (kind == "smallcnn") {
    spec.kind = ArchSpec::Kind::smallcnn;
  } else {
    throw std::runtime_error("model file: unknown arch kind '" + kind + "'");
  }
  spec.in_c = j.at("in_c").get<int>();
  spec.in_h = j.at("in_h").get<int>();
  spec.in_w = j.at("in_w").get<int>();
  spec.hidden = j.at("hidden").get<std::vector<int>>();
  spec.taps = j.at("taps").get<std::vector<std::string>>();
  spec.head_width = j.at("head_width").get<int>();
  return spec;
}

struct TensorRef {
  std::string name;
  const Tensor<float>* tensor;
};

std::vector<TensorRef> tensor_table(const Model<float>& model) {
  std::vector<TensorRef> refs;
  for (const auto& [name, t] : model.backbone) refs.push_back({"backbone/" + name, &t});
  for (const auto& head : model.heads) {
    std::string prefix = "head" + std::to_string(head.task_id) + "/";
    for (const auto& [name, t] : head.params) refs.push_back({prefix + name, &t});
  }
  return refs;
}

}  // namespace

std::vector<std::uint8_t> serialize_model(const Model<float>& model) {
  auto refs = tensor_table(model);

  std::vector<std::uint8_t> payload;
  json tensors = json::array();
  for (const auto& ref : refs) {
    json entry;
    entry["name"] = ref.name;
    entry["shape"] = ref.tensor->shape();
    entry["offset"] = payload.size();
    tensors.push_back(entry);
    for (float v : ref.tensor->values()) put_f32(payload, v);
  }

  json class_lists = json::array();
  for (const auto& head : model.heads) class_lists.push_back(head.classes);

  json manifest;
  manifest["version"] = 1;
  manifest["arch_hash"] = arch_hash_hex(model.arch);
  manifest["arch"] = arch_to_json(model.arch);
  manifest["dtype"] = "f32";
  manifest["tensors"] = tensors;
  manifest["task_ids"] = model.task_ids();
  manifest["class_lists"] = class_lists;
  manifest["tap_names"] = effective_taps(model.arch);

  std::string mstr = manifest.dump();
  std::vector<std::uint8_t> out;
  put_u32(out, std::uint32_t(mstr.size()));
  out.insert(out.end(), mstr.begin(), mstr.end());
  out.insert(out.end(), payload.begin(), payload.end());
  put_u32(out, crc32(payload.data(), payload.size()));
  return out;
}

Model<float> deserialize_model(const std::vector<std::uint8_t>& bytes, bool requires_grad) {
  if (bytes.size() < 8) throw std::runtime_error("model file: truncated (no manifest header)");
  std::uint32_t mlen = get_u32(bytes.data());
  if (bytes.size() < 4 + std::size_t(mlen) + 4)
    throw std::runtime_error("model file: truncated (manifest extends past end)");

  json manifest;
  try {
    manifest = json::parse(bytes.begin() + 4, bytes.begin() + 4 + mlen);
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("model file: manifest parse error: ") + e.what());
  }

  if (manifest.at("version").get<int>() != 1)
    throw std::runtime_error("model file: unsupported version " +
                             std::to_string(manifest.at("version").get<int>()));
  if (manifest.at("dtype").get<std::string>() != "f32")
    throw std::runtime_error("model file: unsupported dtype '" +
                             manifest.at("dtype").get<std::string>() + "'");

  ArchSpec spec = arch_from_json(manifest.at("arch"));
  std::string expected_hash = arch_hash_hex(spec);
  std::string found_hash = manifest.at("arch_hash").get<std::string>();
  if (expected_hash != found_hash)
    throw std::runtime_error("model file: architecture hash mismatch, expected " + expected_hash +
                             " from arch block, found " + found_hash);

  const std::uint8_t* payload = bytes.data() + 4 + mlen;
  std::size_t payload_len = bytes.size() - 4 - mlen - 4;
  std::uint32_t stored_crc = get_u32(bytes.data() + bytes.size() - 4);
  std::uint32_t actual_crc = crc32(payload, payload_len);
  if (stored_crc != actual_crc)
    throw std::runtime_error("model file: payload CRC mismatch, expected " +
                             std::to_string(stored_crc) + ", computed " +
                             std::to_string(actual_crc));

  Model<float> model;
  model.arch = spec;

  std::vector<int> task_ids;
  std::vector<std::vector<int>> class_lists;
  try {
    task_ids = manifest.at("task_ids").get<std::vector<int>>();
    class_lists = manifest.at("class_lists").get<std::vector<std::vector<int>>>();
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("model file: malformed manifest: ") + e.what());
  }
  if (task_ids.size() != class_lists.size())
    throw std::runtime_error("model file: task id / class list count mismatch");
  for (std::size_t i = 0; i < task_ids.size(); ++i)
    model.heads.push_back({task_ids[i], {}, class_lists[i]});

  for (const auto& entry : manifest.at("tensors")) {
    std::string name;
    std::vector<std::size_t> shape;
    std::size_t offset;
    try {
      name = entry.at("name").get<std::string>();
      shape = entry.at("shape").get<std::vector<std::size_t>>();
      offset = entry.at("offset").get<std::size_t>();
    } catch (const json::exception& e) {
      throw std::runtime_error(std::string("model file: malformed tensor table: ") + e.what());
    }
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    if (offset + n * 4 > payload_len)
      throw std::runtime_error("model file: tensor '" + name + "' extends past payload");
    std::vector<float> values(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = get_f32(payload + offset + i * 4);
    auto tensor = Tensor<float>::from_values(shape, std::move(values), requires_grad);

    auto slash = name.find('/');
    if (slash == std::string::npos)
      throw std::runtime_error("model file: malformed tensor name '" + name + "'");
    std::string scope = name.substr(0, slash);
    std::string local = name.substr(slash + 1);
    if (scope == "backbone") {
      model.backbone.insert(local, std::move(tensor));
    } else if (scope.rfind("head", 0) == 0) {
      int task_id = std::stoi(scope.substr(4));
      bool placed = false;
      for (auto& head : model.heads) {
        if (head.task_id == task_id) {
          head.params.insert(local, std::move(tensor));
          placed = true;
          break;
        }
      }
      if (!placed)
        throw std::runtime_error("model file: tensor '" + name + "' names unknown head");
    } else {
      throw std::runtime_error("model file: tensor '" + name + "' has unknown scope");
    }
  }
  return model;
}

void save_model(const Model<float>& model, const std::string& path) {
  write_file_bytes(path, serialize_model(model));
}

Model<float> load_model(const std::string& path, bool requires_grad) {
  return deserialize_model(read_file_bytes(path), requires_grad);
}

Model<float> load_model_expecting(const std::string& path, const ArchSpec& expected,
                                  bool requires_grad) {
  Model<float> model = load_model(path, requires_grad);
  if (arch_hash_hex(model.arch) != arch_hash_hex(expected))
    throw std::runtime_error("model file: architecture hash mismatch, expected " +
                             arch_hash_hex(expected) + ", found " + arch_hash_hex(model.arch));
  return model;
}

std::vector<std::uint8_t> serialize_tensor_blob(
    const std::vector<std::pair<std::string, Tensor<float>>>& tensors) {
  std::vector<std::uint8_t> payload;
  json table = json::array();
  for (const auto& [name, t] : tensors) {
    json entry;
    entry["name"] = name;
    entry["shape"] = t.shape();
    entry["offset"] = payload.size();
    table.push_back(entry);
    for (float v : t.values()) put_f32(payload, v);
  }
  json manifest;
  manifest["version"] = 1;
  manifest["dtype"] = "f32";
  manifest["tensors"] = table;

  std::string mstr = manifest.dump();
  std::vector<std::uint8_t> out;
  put_u32(out, std::uint32_t(mstr.size()));
  out.insert(out.end(), mstr.begin(), mstr.end());
  out.insert(out.end(), payload.begin(), payload.end());
  put_u32(out, crc32(payload.data(), payload.size()));
  return out;
}

std::vector<std::pair<std::string, Tensor<float>>> deserialize_tensor_blob(
    const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8) throw std::runtime_error("tensor blob: truncated");
  std::uint32_t mlen = get_u32(bytes.data());
  if (bytes.size() < 4 + std::size_t(mlen) + 4) throw std::runtime_error("tensor blob: truncated");
  json manifest;
  try {
    manifest = json::parse(bytes.begin() + 4, bytes.begin() + 4 + mlen);
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("tensor blob: manifest parse error: ") + e.what());
  }
  if (manifest.at("dtype").get<std::string>() != "f32")
    throw std::runtime_error("tensor blob: unsupported dtype");

  const std::uint8_t* payload = bytes.data() + 4 + mlen;
  std::size_t payload_len = bytes.size() - 4 - mlen - 4;
  std::uint32_t stored_crc = get_u32(bytes.data() + bytes.size() - 4);
  if (stored_crc != crc32(payload, payload_len))
    throw std::runtime_error("tensor blob: payload CRC mismatch");

  std::vector<std::pair<std::string, Tensor<float>>> out;
  for (const auto& entry : manifest.at("tensors")) {
    auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    std::size_t offset = entry.at("offset").get<std::size_t>();
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    if (offset + n * 4 > payload_len) throw std::runtime_error("tensor blob: tensor out of range");
    std::vector<float> values(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = get_f32(payload + offset + i * 4);
    out.emplace_back(entry.at("name").get<std::string>(),
                     Tensor<float>::from_values(shape, std::move(values)));
  }
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace daclab
