#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dtq/tensor.hpp"

namespace dtq {

// Named-tensor container file:
//   u64 little-endian header length N
//   N bytes of UTF-8 JSON: {name: {"dtype": "f64"|"f32", "shape": [...],
//                                  "data_offsets": [begin, end]}}
//   raw little-endian buffers, offsets relative to the end of the header.
// Matrices are row-major in [output, input] orientation. Entries are written
// in name order, so equal contents give equal bytes.
class TensorContainer {
 public:
  void put(const std::string& name, const Tensor& tensor);
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  // Throws ImportError naming the tensor when absent.
  const Tensor& get(const std::string& name) const;
  std::vector<std::string> names() const;
  std::size_t size() const { return tensors_.size(); }
  std::size_t total_elements() const;

  void write(const std::filesystem::path& path) const;
  // f32 entries are widened to f64 on load.
  static TensorContainer read(const std::filesystem::path& path);

 private:
  std::map<std::string, Tensor> tensors_;
};

}  // namespace dtq
