#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

namespace dklearn {

// One named array of a container directory: 64-bit little-endian floats,
// row-major, stored flat in <name>.bin with the shape in manifest.json.
struct StoredArray {
  std::vector<std::size_t> shape;
  std::vector<double> data;  // row-major

  std::size_t element_count() const;
  Eigen::MatrixXd as_matrix() const;  // requires rank 2
  Eigen::VectorXd as_vector() const;  // requires rank 1

  static StoredArray from_matrix(const Eigen::MatrixXd& m);
  static StoredArray from_vector(const Eigen::VectorXd& v);
};

struct ContainerData {
  std::map<std::string, StoredArray> arrays;
  nlohmann::json meta;  // manifest fields beyond the reserved ones
};

// Writes manifest.json (format_version=1, dtype "f8", byte_order "little",
// layout "row-major", the array table, and the caller's meta fields merged
// at top level) plus one .bin per array.  Deterministic bytes for equal
// inputs.  meta must not use the reserved manifest keys.
void write_container(const std::string& dir,
                     const std::map<std::string, StoredArray>& arrays,
                     const nlohmann::json& meta);

// Reads a directory written by write_container, validating the reserved
// manifest fields and that each .bin's byte length matches its declared
// shape; mismatches raise IngestError naming the array.
ContainerData read_container(const std::string& dir);

}  // namespace dklearn
