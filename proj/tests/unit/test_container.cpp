#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <Eigen/Dense>

#include "doctest.h"
#include "json.hpp"

#include "dklearn/container.hpp"
#include "dklearn/errors.hpp"
#include "dklearn/rng.hpp"

using namespace dklearn;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("dklearn-test-" + tag);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::map<std::string, StoredArray> sample_arrays() {
  Rng rng(3);
  Eigen::MatrixXd m(4, 3);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 3; ++j) m(i, j) = rng.normal();
  }
  Eigen::VectorXd v(7);
  for (int i = 0; i < 7; ++i) v[i] = rng.uniform(-5.0, 5.0);
  return {{"mat", StoredArray::from_matrix(m)},
          {"vec", StoredArray::from_vector(v)}};
}

}  // namespace

TEST_CASE("stored arrays convert to and from eigen") {
  Eigen::MatrixXd m(2, 3);
  m << 1, 2, 3, 4, 5, 6;
  StoredArray a = StoredArray::from_matrix(m);
  REQUIRE(a.shape == std::vector<std::size_t>{2, 3});
  CHECK(a.element_count() == 6);
  // Row-major flattening.
  CHECK(a.data == std::vector<double>{1, 2, 3, 4, 5, 6});
  CHECK((a.as_matrix() - m).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(a.as_vector(), ShapeError);

  Eigen::VectorXd v(3);
  v << 7, 8, 9;
  StoredArray b = StoredArray::from_vector(v);
  CHECK(b.shape == std::vector<std::size_t>{3});
  CHECK((b.as_vector() - v).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(b.as_matrix(), ShapeError);
}

TEST_CASE("round-trip is bit exact with meta preserved") {
  const fs::path dir = fresh_dir("roundtrip");
  const auto arrays = sample_arrays();
  nlohmann::json meta;
  meta["kind"] = "unit-test";
  meta["answer"] = 42;
  write_container(dir.string(), arrays, meta);

  const ContainerData back = read_container(dir.string());
  REQUIRE(back.arrays.size() == 2);
  for (const auto& [name, arr] : arrays) {
    REQUIRE(back.arrays.count(name) == 1);
    const StoredArray& got = back.arrays.at(name);
    CHECK(got.shape == arr.shape);
    CHECK(got.data == arr.data);  // exact doubles through the file
  }
  CHECK(back.meta.at("kind") == "unit-test");
  CHECK(back.meta.at("answer") == 42);
  fs::remove_all(dir);
}

TEST_CASE("written bytes are deterministic") {
  const fs::path d1 = fresh_dir("det1");
  const fs::path d2 = fresh_dir("det2");
  const auto arrays = sample_arrays();
  nlohmann::json meta{{"kind", "unit-test"}};
  write_container(d1.string(), arrays, meta);
  write_container(d2.string(), arrays, meta);
  CHECK(slurp(d1 / "manifest.json") == slurp(d2 / "manifest.json"));
  CHECK(slurp(d1 / "mat.bin") == slurp(d2 / "mat.bin"));
  CHECK(slurp(d1 / "vec.bin") == slurp(d2 / "vec.bin"));
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("manifest carries the reserved format fields") {
  const fs::path dir = fresh_dir("manifest");
  write_container(dir.string(), sample_arrays(), nlohmann::json::object());
  const nlohmann::json manifest =
      nlohmann::json::parse(slurp(dir / "manifest.json"));
  CHECK(manifest.at("format_version") == 1);
  CHECK(manifest.at("dtype") == "f8");
  CHECK(manifest.at("byte_order") == "little");
  CHECK(manifest.at("layout") == "row-major");
  CHECK(manifest.at("arrays").contains("mat"));
  fs::remove_all(dir);
}

TEST_CASE("meta must not shadow reserved keys") {
  const fs::path dir = fresh_dir("reserved");
  nlohmann::json meta{{"dtype", "f4"}};
  CHECK_THROWS_AS(write_container(dir.string(), sample_arrays(), meta),
                  ConfigError);
  CHECK_THROWS_AS(
      write_container(dir.string(), sample_arrays(),
                      nlohmann::json::array()),
      ConfigError);
}

TEST_CASE("missing manifest is an ingest error") {
  const fs::path dir = fresh_dir("missing");
  fs::create_directories(dir);
  CHECK_THROWS_AS(read_container(dir.string()), IngestError);
  fs::remove_all(dir);
}

TEST_CASE("truncated payload is an ingest error naming the array") {
  const fs::path dir = fresh_dir("truncated");
  write_container(dir.string(), sample_arrays(), nlohmann::json::object());
  // Chop the matrix payload.
  fs::resize_file(dir / "mat.bin", 8);
  try {
    read_container(dir.string());
    FAIL("expected IngestError");
  } catch (const IngestError& e) {
    CHECK(std::string(e.what()).find("mat") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("corrupt manifest json is an ingest error") {
  const fs::path dir = fresh_dir("corrupt");
  write_container(dir.string(), sample_arrays(), nlohmann::json::object());
  std::ofstream(dir / "manifest.json") << "{not json";
  CHECK_THROWS_AS(read_container(dir.string()), IngestError);
  fs::remove_all(dir);
}
