#include "dklearn/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <utility>

#include "dklearn/container.hpp"
#include "dklearn/errors.hpp"
#include "dklearn/rng.hpp"

#include "json.hpp"

namespace dklearn {

using nlohmann::json;

Eigen::Index MultiChannelImage::rows() const {
  return channels.empty() ? 0 : channels.front().rows();
}

Eigen::Index MultiChannelImage::cols() const {
  return channels.empty() ? 0 : channels.front().cols();
}

void MultiChannelImage::validate() const {
  if (channels.empty()) {
    throw ShapeError("MultiChannelImage: no channels");
  }
  if (names.size() != channels.size()) {
    throw ShapeError("MultiChannelImage: expected one name per channel");
  }
  const Eigen::Index m = channels.front().rows();
  const Eigen::Index n = channels.front().cols();
  if (m < 1 || n < 1) {
    throw ShapeError("MultiChannelImage: channels must be non-empty");
  }
  for (std::size_t c = 0; c < channels.size(); ++c) {
    if (channels[c].rows() != m || channels[c].cols() != n) {
      throw ShapeError("MultiChannelImage: channel " + std::to_string(c) +
                       " does not match the shared image shape");
    }
    if (names[c].empty()) {
      throw ShapeError("MultiChannelImage: channel " + std::to_string(c) +
                       " has an empty name");
    }
  }
}

void SpectralGrid::validate() const {
  if (m < 1 || n < 1) {
    throw ShapeError("SpectralGrid: spatial dimensions must be positive");
  }
  if (!signals.empty() && voltage.size() < 3) {
    throw ShapeError("SpectralGrid: a voltage loop needs at least 3 points");
  }
  for (const auto& sig : signals) {
    if (sig.name.empty()) {
      throw ShapeError("SpectralGrid: signal with an empty name");
    }
    if (sig.response.rows() != m * n || sig.response.cols() != voltage.size()) {
      throw ShapeError("SpectralGrid: signal '" + sig.name +
                       "' response must be (m*n) x v");
    }
  }
}

PatchStack extract_patches(const MultiChannelImage& image, int p) {
  image.validate();
  const Eigen::Index m = image.rows();
  const Eigen::Index n = image.cols();
  if (p < 1 || p > std::min(m, n)) {
    throw ConfigError("extract_patches: patch size must lie in [1, min(m, n)]");
  }

  PatchStack out;
  out.p = p;
  out.grid_rows = m - p + 1;
  out.grid_cols = n - p + 1;
  const Eigen::Index windows = out.grid_rows * out.grid_cols;
  const Eigen::Index dim = static_cast<Eigen::Index>(p) * p;

  out.center_pixels.reserve(static_cast<std::size_t>(windows));
  for (Eigen::Index k = 0; k < out.grid_rows; ++k) {
    for (Eigen::Index l = 0; l < out.grid_cols; ++l) {
      out.center_pixels.push_back((k + p / 2) * n + (l + p / 2));
    }
  }

  out.features.reserve(image.channels.size());
  for (const auto& channel : image.channels) {
    Eigen::MatrixXd feats(windows, dim);
    for (Eigen::Index k = 0; k < out.grid_rows; ++k) {
      for (Eigen::Index l = 0; l < out.grid_cols; ++l) {
        const Eigen::Index row = k * out.grid_cols + l;
        for (Eigen::Index i = 0; i < p; ++i) {
          for (Eigen::Index j = 0; j < p; ++j) {
            feats(row, i * p + j) = channel(k + i, l + j);
          }
        }
      }
    }
    out.features.push_back(std::move(feats));
  }
  return out;
}

double loop_area(const Eigen::VectorXd& voltage,
                 const Eigen::VectorXd& response) {
  if (voltage.size() != response.size()) {
    throw ShapeError("loop_area: voltage and response lengths differ");
  }
  const Eigen::Index v = voltage.size();
  if (v < 3) {
    throw ShapeError("loop_area: a loop needs at least 3 points");
  }
  double twice = 0.0;
  for (Eigen::Index i = 0; i < v; ++i) {
    const Eigen::Index j = (i + 1) % v;
    twice += voltage[i] * response[j] - voltage[j] * response[i];
  }
  return 0.5 * std::abs(twice);
}

namespace {

Scalarizer signal_loop_area(std::string signal) {
  return [signal = std::move(signal)](const SpectralGrid& grid,
                                      Eigen::Index pixel) {
    for (const auto& sig : grid.signals) {
      if (sig.name == signal) {
        if (pixel < 0 || pixel >= sig.response.rows()) {
          throw ShapeError("scalarizer: pixel index out of range");
        }
        return loop_area(grid.voltage, sig.response.row(pixel).transpose());
      }
    }
    throw ConfigError("scalarizer: dataset has no signal named '" + signal +
                      "'");
  };
}

std::map<std::string, Scalarizer>& scalarizer_registry() {
  static std::map<std::string, Scalarizer> registry = {
      {"polarization_loop_area", signal_loop_area("polarization")},
      {"frequency_loop_area", signal_loop_area("frequency")},
  };
  return registry;
}

}  // namespace

void register_scalarizer(const std::string& id, Scalarizer fn) {
  if (id.empty()) {
    throw ConfigError("register_scalarizer: empty id");
  }
  if (!fn) {
    throw ConfigError("register_scalarizer: null scalarizer '" + id + "'");
  }
  auto& registry = scalarizer_registry();
  if (registry.count(id) != 0) {
    throw ConfigError("register_scalarizer: '" + id + "' already registered");
  }
  registry.emplace(id, std::move(fn));
}

Scalarizer get_scalarizer(const std::string& id) {
  const auto& registry = scalarizer_registry();
  auto it = registry.find(id);
  if (it == registry.end()) {
    std::string known;
    for (const auto& [name, fn] : registry) {
      known += known.empty() ? name : ", " + name;
    }
    throw ConfigError("get_scalarizer: unknown scalarizer '" + id +
                      "' (known: " + known + ")");
  }
  return it->second;
}

std::vector<std::string> scalarizer_ids() {
  std::vector<std::string> ids;
  for (const auto& [name, fn] : scalarizer_registry()) {
    ids.push_back(name);
  }
  return ids;
}

ChannelDataset build_patch_dataset(const ImageDataset& dataset,
                                   const std::string& scalarizer_id, int p) {
  dataset.image.validate();
  dataset.spectra.validate();
  if (dataset.spectra.signals.empty()) {
    throw ConfigError("build_patch_dataset: no spectroscopic signals");
  }
  if (dataset.spectra.m != dataset.image.rows() ||
      dataset.spectra.n != dataset.image.cols()) {
    throw ShapeError(
        "build_patch_dataset: image and spectral grid shapes differ");
  }
  Scalarizer fn = get_scalarizer(scalarizer_id);

  PatchStack stack = extract_patches(dataset.image, p);
  ChannelDataset out;
  out.channels = std::move(stack.features);
  out.channel_names = dataset.image.names;
  out.oracle = [spectra = dataset.spectra,
                centers = std::move(stack.center_pixels),
                fn = std::move(fn)](Eigen::Index row) {
    return fn(spectra, centers.at(static_cast<std::size_t>(row)));
  };
  auto it = dataset.informative.find(scalarizer_id);
  if (it != dataset.informative.end()) {
    out.correct_channel = it->second;
  }
  return out;
}

ExperimentTrace run_structure_property(const ImageDataset& dataset,
                                       const std::string& scalarizer_id, int p,
                                       LoopBackend& backend,
                                       const LoopConfig& config) {
  ChannelDataset channels = build_patch_dataset(dataset, scalarizer_id, p);
  return run_active_learning(channels, backend, config);
}

namespace {

// Sum of random Gaussian bumps rescaled to [0, 1].
Eigen::MatrixXd smooth_field(Eigen::Index m, Eigen::Index n, int blobs,
                             Rng& rng) {
  Eigen::MatrixXd field = Eigen::MatrixXd::Zero(m, n);
  const double extent = static_cast<double>(std::min(m, n));
  for (int b = 0; b < blobs; ++b) {
    const double rc = rng.uniform(0.0, static_cast<double>(m - 1));
    const double cc = rng.uniform(0.0, static_cast<double>(n - 1));
    const double width = rng.uniform(extent / 8.0, extent / 3.0);
    const double weight = rng.uniform(-1.0, 1.0);
    for (Eigen::Index r = 0; r < m; ++r) {
      for (Eigen::Index c = 0; c < n; ++c) {
        const double d2 = (r - rc) * (r - rc) + (c - cc) * (c - cc);
        field(r, c) += weight * std::exp(-d2 / (2.0 * width * width));
      }
    }
  }
  const double lo = field.minCoeff();
  const double hi = field.maxCoeff();
  if (hi - lo < 1e-12) {
    return Eigen::MatrixXd::Zero(m, n);
  }
  return (field.array() - lo) / (hi - lo);
}

}  // namespace

ImageDataset generate_synth_image(const SynthImageConfig& config,
                                  std::uint64_t seed) {
  if (config.m < 2 || config.n < 2) {
    throw ConfigError("generate_synth_image: image must be at least 2x2");
  }
  if (config.channels < 1) {
    throw ConfigError("generate_synth_image: need at least one channel");
  }
  if (config.v < 3) {
    throw ConfigError("generate_synth_image: v must be at least 3");
  }
  if (config.blobs < 1) {
    throw ConfigError("generate_synth_image: blobs must be positive");
  }
  const auto check_channel = [&](int idx, const char* what) {
    if (idx < 0 || idx >= config.channels) {
      throw ConfigError(std::string("generate_synth_image: ") + what +
                        " channel out of range");
    }
  };
  check_channel(config.informative_polarization, "polarization");
  check_channel(config.informative_frequency, "frequency");

  ImageDataset out;
  // Raw bump fields span only ~blobs degrees of freedom, so independently
  // drawn channels come out heavily correlated by chance.  Gram-Schmidt on
  // the centered pixel vectors makes the distractor channels carry no
  // linear trace of the informative field; the affine [0,1] rescale keeps
  // the pairwise correlations at zero.
  const Eigen::Index px = config.m * config.n;
  std::vector<Eigen::VectorXd> basis;
  for (int c = 0; c < config.channels; ++c) {
    Rng rng(derive_seed(seed, "synth-field", static_cast<std::uint64_t>(c)));
    const Eigen::MatrixXd raw =
        smooth_field(config.m, config.n, config.blobs, rng);
    Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(raw.data(), px);
    v.array() -= v.mean();
    for (const Eigen::VectorXd& b : basis) v -= b.dot(v) * b;
    const double norm = v.norm();
    if (norm > 1e-9 * std::sqrt(static_cast<double>(px))) {
      basis.push_back(v / norm);
    }
    Eigen::MatrixXd field = Eigen::MatrixXd::Zero(config.m, config.n);
    const double lo = v.minCoeff();
    const double hi = v.maxCoeff();
    if (hi - lo >= 1e-12) {
      Eigen::Map<Eigen::VectorXd>(field.data(), px) =
          (v.array() - lo) / (hi - lo);
    }
    out.image.channels.push_back(std::move(field));
    out.image.names.push_back("ch" + std::to_string(c));
  }

  out.spectra.m = config.m;
  out.spectra.n = config.n;
  out.spectra.voltage.resize(config.v);
  Eigen::VectorXd unit(config.v);
  constexpr double kTwoPi = 6.283185307179586476925286766559;
  for (int k = 0; k < config.v; ++k) {
    const double theta = kTwoPi * k / config.v;
    out.spectra.voltage[k] = std::cos(theta);
    unit[k] = std::sin(theta);
  }

  // Elliptic loop per pixel with half-height affine in the informative
  // field, so the loop area is a smooth function of that channel alone.
  const auto make_signal = [&](const std::string& name, int channel) {
    const Eigen::MatrixXd& field = out.image.channels[channel];
    SpectralSignal sig;
    sig.name = name;
    sig.response.resize(config.m * config.n, config.v);
    for (Eigen::Index r = 0; r < config.m; ++r) {
      for (Eigen::Index c = 0; c < config.n; ++c) {
        const double half = 0.2 + 0.8 * field(r, c);
        sig.response.row(out.spectra.pixel(r, c)) = half * unit.transpose();
      }
    }
    out.spectra.signals.push_back(std::move(sig));
  };
  make_signal("polarization", config.informative_polarization);
  make_signal("frequency", config.informative_frequency);

  out.informative["polarization_loop_area"] = config.informative_polarization;
  out.informative["frequency_loop_area"] = config.informative_frequency;
  return out;
}

void save_dataset(const std::string& dir, const ImageDataset& dataset) {
  dataset.image.validate();
  dataset.spectra.validate();
  if (dataset.spectra.signals.empty()) {
    throw ConfigError("save_dataset: no spectroscopic signals");
  }
  if (dataset.spectra.m != dataset.image.rows() ||
      dataset.spectra.n != dataset.image.cols()) {
    throw ShapeError("save_dataset: image and spectral grid shapes differ");
  }

  std::map<std::string, StoredArray> arrays;
  json channel_names = json::array();
  for (std::size_t c = 0; c < dataset.image.channels.size(); ++c) {
    arrays["channel." + dataset.image.names[c]] =
        StoredArray::from_matrix(dataset.image.channels[c]);
    channel_names.push_back(dataset.image.names[c]);
  }
  arrays["voltage"] = StoredArray::from_vector(dataset.spectra.voltage);
  json signal_names = json::array();
  for (const auto& sig : dataset.spectra.signals) {
    arrays["signal." + sig.name] = StoredArray::from_matrix(sig.response);
    signal_names.push_back(sig.name);
  }

  json meta;
  meta["kind"] = "image-dataset";
  meta["m"] = dataset.image.rows();
  meta["n"] = dataset.image.cols();
  meta["channels"] = channel_names;
  meta["signals"] = signal_names;
  meta["v"] = dataset.spectra.voltage.size();
  meta["informative"] = json::object();
  for (const auto& [id, channel] : dataset.informative) {
    meta["informative"][id] = channel;
  }
  write_container(dir, arrays, meta);
}

namespace {

const json& require_field(const json& meta, const std::string& key) {
  if (!meta.contains(key)) {
    throw IngestError("load_dataset: manifest missing field '" + key + "'");
  }
  return meta.at(key);
}

}  // namespace

ImageDataset load_dataset(const std::string& dir) {
  ContainerData container = read_container(dir);
  const std::map<std::string, StoredArray>& arrays = container.arrays;
  const json& meta = container.meta;
  if (require_field(meta, "kind").get<std::string>() != "image-dataset") {
    throw IngestError("load_dataset: '" + dir + "' is not an image dataset");
  }
  const auto m = require_field(meta, "m").get<Eigen::Index>();
  const auto n = require_field(meta, "n").get<Eigen::Index>();
  const auto v = require_field(meta, "v").get<Eigen::Index>();

  const auto fetch = [&](const std::string& name) -> const StoredArray& {
    auto it = arrays.find(name);
    if (it == arrays.end()) {
      throw IngestError("load_dataset: manifest lists no array '" + name +
                        "'");
    }
    return it->second;
  };

  ImageDataset out;
  for (const auto& name : require_field(meta, "channels")) {
    const std::string channel = name.get<std::string>();
    Eigen::MatrixXd values = fetch("channel." + channel).as_matrix();
    if (values.rows() != m || values.cols() != n) {
      throw IngestError("load_dataset: channel '" + channel +
                        "' does not match the manifest shape");
    }
    out.image.channels.push_back(std::move(values));
    out.image.names.push_back(channel);
  }

  out.spectra.m = m;
  out.spectra.n = n;
  out.spectra.voltage = fetch("voltage").as_vector();
  if (out.spectra.voltage.size() != v) {
    throw IngestError("load_dataset: voltage length does not match manifest");
  }
  for (const auto& name : require_field(meta, "signals")) {
    SpectralSignal sig;
    sig.name = name.get<std::string>();
    sig.response = fetch("signal." + sig.name).as_matrix();
    if (sig.response.rows() != m * n || sig.response.cols() != v) {
      throw IngestError("load_dataset: signal '" + sig.name +
                        "' does not match the manifest shape");
    }
    out.spectra.signals.push_back(std::move(sig));
  }

  if (meta.contains("informative")) {
    for (const auto& [id, channel] : meta.at("informative").items()) {
      out.informative[id] = channel.get<int>();
    }
  }

  out.image.validate();
  out.spectra.validate();
  return out;
}

Eigen::MatrixXd load_csv_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IngestError("load_csv_matrix: cannot open '" + path + "'");
  }
  std::vector<std::vector<double>> rows;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    std::vector<double> row;
    std::stringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) {
      try {
        std::size_t pos = 0;
        const double value = std::stod(cell, &pos);
        if (cell.find_first_not_of(" \t\r", pos) != std::string::npos) {
          throw std::invalid_argument("trailing characters");
        }
        row.push_back(value);
      } catch (const std::exception&) {
        throw IngestError("load_csv_matrix: bad number '" + cell + "' at " +
                          path + ":" + std::to_string(line_no));
      }
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw IngestError("load_csv_matrix: ragged row at " + path + ":" +
                        std::to_string(line_no));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty() || rows.front().empty()) {
    throw IngestError("load_csv_matrix: no data in '" + path + "'");
  }
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()),
                      static_cast<Eigen::Index>(rows.front().size()));
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    for (Eigen::Index c = 0; c < out.cols(); ++c) {
      out(r, c) = rows[static_cast<std::size_t>(r)]
                      [static_cast<std::size_t>(c)];
    }
  }
  return out;
}

}  // namespace dklearn
