#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dklearn/active_loop.hpp"

namespace dklearn {

struct MultiChannelImage {
  std::vector<Eigen::MatrixXd> channels;  // each m×n
  std::vector<std::string> names;         // one per channel

  Eigen::Index rows() const;
  Eigen::Index cols() const;
  void validate() const;
};

// One spectroscopic signal: a response curve per pixel, pixels flattened
// row-major to match SpectralGrid::pixel.
struct SpectralSignal {
  std::string name;
  Eigen::MatrixXd response;  // (m·n)×v
};

struct SpectralGrid {
  Eigen::Index m = 0;
  Eigen::Index n = 0;
  Eigen::VectorXd voltage;  // v points, shared by all signals
  std::vector<SpectralSignal> signals;

  Eigen::Index pixel(Eigen::Index r, Eigen::Index c) const { return r * n + c; }
  void validate() const;
};

// Fully-contained p×p windows, one row per window, row-major over the
// window grid; every channel's feature matrix is aligned on that index.
struct PatchStack {
  std::vector<Eigen::MatrixXd> features;    // per channel: G×p²
  std::vector<Eigen::Index> center_pixels;  // G entries (center = +p/2)
  int p = 0;
  Eigen::Index grid_rows = 0;
  Eigen::Index grid_cols = 0;
};

PatchStack extract_patches(const MultiChannelImage& image, int p);

// Absolute shoelace area of the implicitly closed (voltage, response)
// polygon.  Self-intersecting traversals give the net signed-region
// magnitude.
double loop_area(const Eigen::VectorXd& voltage,
                 const Eigen::VectorXd& response);

// Physics scalarizers reduce one pixel's spectroscopy to a scalar target.
using Scalarizer = std::function<double(const SpectralGrid&, Eigen::Index)>;

// "polarization_loop_area" and "frequency_loop_area" are pre-registered;
// ids must be unique.
void register_scalarizer(const std::string& id, Scalarizer fn);
Scalarizer get_scalarizer(const std::string& id);
std::vector<std::string> scalarizer_ids();

// Image + spectroscopy + (for synthetic data) which channel each signal's
// target actually depends on.
struct ImageDataset {
  MultiChannelImage image;
  SpectralGrid spectra;
  std::map<std::string, int> informative;  // signal name → channel index
};

// Patch features as Algorithm-1 channels with the scalarized spectrum at
// each patch center as the oracle.
ChannelDataset build_patch_dataset(const ImageDataset& dataset,
                                   const std::string& scalarizer_id, int p);

// Algorithm 2: patch, scalarize, then hand off to the active loop.
ExperimentTrace run_structure_property(const ImageDataset& dataset,
                                       const std::string& scalarizer_id, int p,
                                       LoopBackend& backend,
                                       const LoopConfig& config);

struct SynthImageConfig {
  Eigen::Index m = 32;
  Eigen::Index n = 32;
  int channels = 4;
  int v = 64;     // loop resolution
  int blobs = 6;  // smooth-field complexity
  int informative_polarization = 1;
  int informative_frequency = 2;
};

// Independent smooth random fields per channel; the polarization and
// frequency loops at each pixel are ellipses whose area is an affine
// function of the designated channel's field value, so each signal's
// target depends on exactly one channel.
ImageDataset generate_synth_image(const SynthImageConfig& config,
                                  std::uint64_t seed);

// Container round-trip (manifest + flat f8 arrays), bit-exact.
void save_dataset(const std::string& dir, const ImageDataset& dataset);
ImageDataset load_dataset(const std::string& dir);

// Convenience CSV ingestion for small arrays (comma-separated, one matrix
// row per line).
Eigen::MatrixXd load_csv_matrix(const std::string& path);

}  // namespace dklearn
