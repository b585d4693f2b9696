#include "dtq/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>

#include "dtq/errors.hpp"

namespace dtq {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

void TensorContainer::put(const std::string& name, const Tensor& tensor) {
  if (name.empty()) throw ContractError("container entry needs a name");
  tensors_[name] = tensor.detach();
}

const Tensor& TensorContainer::get(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ImportError("container has no tensor named '" + name + "'");
  return it->second;
}

std::vector<std::string> TensorContainer::names() const {
  std::vector<std::string> out;
  out.reserve(tensors_.size());
  for (const auto& [name, _] : tensors_) out.push_back(name);
  return out;
}

std::size_t TensorContainer::total_elements() const {
  std::size_t n = 0;
  for (const auto& [_, t] : tensors_) n += t.numel();
  return n;
}

void TensorContainer::write(const std::filesystem::path& path) const {
  nlohmann::json header = nlohmann::json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors_) {
    const std::uint64_t bytes = t.numel() * sizeof(double);
    header[name] = {{"dtype", "f64"}, {"shape", t.shape()}, {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [_, t] : tensors_) {
    out.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

TensorContainer TensorContainer::read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open container '" + path.string() + "': file not found or unreadable");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in) throw ImportError("container '" + path.string() + "' is truncated before its header");
  const auto file_size = std::filesystem::file_size(path);
  if (len > file_size - sizeof(len)) throw ImportError("container header length exceeds file size");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ImportError("container header is not valid JSON: " + std::string(e.what()));
  }
  if (!header.is_object()) throw ImportError("container header must be a JSON object");
  const std::uint64_t data_start = sizeof(len) + len;
  const std::uint64_t data_size = file_size - data_start;

  TensorContainer out;
  for (const auto& [name, entry] : header.items()) {
    if (name == "__metadata__") continue;
    try {
      const std::string dtype = entry.at("dtype").get<std::string>();
      const Shape shape = entry.at("shape").get<Shape>();
      const auto offsets = entry.at("data_offsets").get<std::vector<std::uint64_t>>();
      if (offsets.size() != 2 || offsets[0] > offsets[1] || offsets[1] > data_size) {
        throw ImportError("tensor '" + name + "' has invalid data_offsets");
      }
      const std::size_t count = shape_numel(shape);
      const std::size_t width = dtype == "f64" ? 8 : dtype == "f32" ? 4 : 0;
      if (width == 0) throw ImportError("tensor '" + name + "' has unsupported dtype '" + dtype + "'");
      if (offsets[1] - offsets[0] != count * width) {
        throw ImportError("tensor '" + name + "' byte range does not match shape " + shape_str(shape));
      }
      std::vector<char> raw(offsets[1] - offsets[0]);
      in.seekg(static_cast<std::streamoff>(data_start + offsets[0]));
      in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
      if (!in) throw ImportError("tensor '" + name + "' could not be read");
      std::vector<double> values(count);
      if (width == 8) {
        std::memcpy(values.data(), raw.data(), raw.size());
      } else {
        for (std::size_t i = 0; i < count; ++i) {
          float f;
          std::memcpy(&f, raw.data() + i * 4, 4);
          values[i] = f;
        }
      }
      out.tensors_[name] = Tensor(shape, std::move(values));
    } catch (const nlohmann::json::exception& e) {
      throw ImportError("tensor '" + name + "' has a malformed header entry: " + e.what());
    }
  }
  return out;
}

}  // namespace dtq
