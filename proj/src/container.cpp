#include "dklearn/container.hpp"

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>

#include "dklearn/errors.hpp"

namespace fs = std::filesystem;

namespace dklearn {
namespace {

const char* const kReservedKeys[] = {"format_version", "dtype", "byte_order",
                                     "layout", "arrays"};

void require_little_endian() {
  if constexpr (std::endian::native != std::endian::little)
    throw IngestError("container: only little-endian hosts are supported");
}

bool safe_name(const std::string& name) {
  if (name.empty()) return false;
  for (char c : name) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                    (c >= '0' && c <= '9') || c == '_' || c == '-' || c == '.';
    if (!ok) return false;
  }
  return name != "." && name != "..";
}

}  // namespace

std::size_t StoredArray::element_count() const {
  std::size_t n = 1;
  for (std::size_t s : shape) n *= s;
  return shape.empty() ? 0 : n;
}

Eigen::MatrixXd StoredArray::as_matrix() const {
  if (shape.size() != 2)
    throw ShapeError("StoredArray: expected rank 2, got rank " +
                     std::to_string(shape.size()));
  const auto rows = static_cast<Eigen::Index>(shape[0]);
  const auto cols = static_cast<Eigen::Index>(shape[1]);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j)
      m(i, j) = data[static_cast<std::size_t>(i * cols + j)];
  return m;
}

Eigen::VectorXd StoredArray::as_vector() const {
  if (shape.size() != 1)
    throw ShapeError("StoredArray: expected rank 1, got rank " +
                     std::to_string(shape.size()));
  return Eigen::Map<const Eigen::VectorXd>(data.data(),
                                           static_cast<Eigen::Index>(shape[0]));
}

StoredArray StoredArray::from_matrix(const Eigen::MatrixXd& m) {
  StoredArray a;
  a.shape = {static_cast<std::size_t>(m.rows()),
             static_cast<std::size_t>(m.cols())};
  a.data.resize(static_cast<std::size_t>(m.size()));
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) a.data[k++] = m(i, j);
  return a;
}

StoredArray StoredArray::from_vector(const Eigen::VectorXd& v) {
  StoredArray a;
  a.shape = {static_cast<std::size_t>(v.size())};
  a.data.assign(v.data(), v.data() + v.size());
  return a;
}

void write_container(const std::string& dir,
                     const std::map<std::string, StoredArray>& arrays,
                     const nlohmann::json& meta) {
  require_little_endian();
  if (!meta.is_object() && !meta.is_null())
    throw ConfigError("write_container: meta must be a JSON object");

  nlohmann::json manifest;
  manifest["format_version"] = 1;
  manifest["dtype"] = "f8";
  manifest["byte_order"] = "little";
  manifest["layout"] = "row-major";
  if (meta.is_object()) {
    for (const auto& [key, value] : meta.items()) {
      for (const char* reserved : kReservedKeys)
        if (key == reserved)
          throw ConfigError("write_container: meta uses reserved key '" + key +
                            "'");
      manifest[key] = value;
    }
  }

  nlohmann::json table = nlohmann::json::object();
  for (const auto& [name, array] : arrays) {
    if (!safe_name(name))
      throw ConfigError("write_container: bad array name '" + name + "'");
    if (array.data.size() != array.element_count())
      throw ShapeError("write_container: array '" + name +
                       "' data does not match its shape");
    table[name] = {{"shape", array.shape}, {"file", name + ".bin"}};
  }
  manifest["arrays"] = table;

  fs::create_directories(dir);
  {
    std::ofstream out(fs::path(dir) / "manifest.json",
                      std::ios::binary | std::ios::trunc);
    if (!out) throw IngestError("write_container: cannot open manifest.json");
    out << manifest.dump(2) << '\n';
    if (!out) throw IngestError("write_container: manifest write failed");
  }
  for (const auto& [name, array] : arrays) {
    std::ofstream out(fs::path(dir) / (name + ".bin"),
                      std::ios::binary | std::ios::trunc);
    if (!out)
      throw IngestError("write_container: cannot open array '" + name + "'");
    out.write(reinterpret_cast<const char*>(array.data.data()),
              static_cast<std::streamsize>(array.data.size() * sizeof(double)));
    if (!out)
      throw IngestError("write_container: write failed for array '" + name +
                        "'");
  }
}

ContainerData read_container(const std::string& dir) {
  require_little_endian();
  const fs::path manifest_path = fs::path(dir) / "manifest.json";
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in)
    throw IngestError("read_container: missing manifest at " +
                      manifest_path.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw IngestError("read_container: manifest parse error: " +
                      std::string(e.what()));
  }

  auto require_field = [&](const char* key, const nlohmann::json& want) {
    if (!manifest.contains(key) || manifest[key] != want)
      throw IngestError(std::string("read_container: manifest field '") + key +
                        "' missing or unsupported");
  };
  require_field("format_version", 1);
  require_field("dtype", "f8");
  require_field("byte_order", "little");
  require_field("layout", "row-major");
  if (!manifest.contains("arrays") || !manifest["arrays"].is_object())
    throw IngestError("read_container: manifest lacks an arrays table");

  ContainerData out;
  for (const auto& [name, entry] : manifest["arrays"].items()) {
    if (!safe_name(name))
      throw IngestError("read_container: bad array name '" + name + "'");
    StoredArray array;
    try {
      array.shape = entry.at("shape").get<std::vector<std::size_t>>();
    } catch (const nlohmann::json::exception&) {
      throw IngestError("read_container: bad shape for array '" + name + "'");
    }
    const std::string file =
        entry.contains("file") ? entry["file"].get<std::string>()
                               : name + ".bin";
    if (!safe_name(file))
      throw IngestError("read_container: bad file name for array '" + name +
                        "'");
    const fs::path bin = fs::path(dir) / file;
    std::ifstream data(bin, std::ios::binary | std::ios::ate);
    if (!data)
      throw IngestError("read_container: missing data file for array '" +
                        name + "'");
    const auto bytes = static_cast<std::size_t>(data.tellg());
    const std::size_t expected = array.element_count() * sizeof(double);
    if (bytes != expected)
      throw IngestError("read_container: array '" + name + "' holds " +
                        std::to_string(bytes) + " bytes, manifest declares " +
                        std::to_string(expected));
    array.data.resize(array.element_count());
    data.seekg(0);
    data.read(reinterpret_cast<char*>(array.data.data()),
              static_cast<std::streamsize>(expected));
    if (!data)
      throw IngestError("read_container: short read on array '" + name + "'");
    out.arrays.emplace(name, std::move(array));
  }

  out.meta = nlohmann::json::object();
  for (const auto& [key, value] : manifest.items()) {
    bool reserved = false;
    for (const char* r : kReservedKeys) reserved = reserved || key == r;
    if (!reserved) out.meta[key] = value;
  }
  return out;
}

}  // namespace dklearn
