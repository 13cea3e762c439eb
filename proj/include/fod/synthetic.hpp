// SPDX-License-Identifier: Apache-2.0
//
// Seeded synthetic texture dataset with three anomaly families:
//   local    - contiguous square with an intensity offset
//   global   - texture frequency rescaled over the whole image
//   quadrant - top-left and bottom-right quadrants exchanged (locally normal, globally wrong)

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "fod/tensor.hpp"

namespace fod {

enum class Texture { grating, noise };
std::string_view to_string(Texture t);
Texture parse_texture(std::string_view s);

enum class AnomalyKind { none, local, global, quadrant };
std::string_view to_string(AnomalyKind k);
AnomalyKind parse_anomaly_kind(std::string_view s);

/// Relative weights of the anomaly kinds among the anomalous test images.
struct AnomalyMix {
  std::size_t local = 2;
  std::size_t global = 2;
  std::size_t quadrant = 1;

  /// "local:2,global:2,quadrant:1"; omitted kinds get weight 0.
  static AnomalyMix parse(std::string_view s);
  std::string to_string() const;
  std::size_t total() const { return local + global + quadrant; }
  /// Kind of each of n anomalous images, largest-remainder split, grouped by kind.
  std::vector<AnomalyKind> schedule(std::size_t n) const;
};

struct SyntheticSpec {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t channels = 1;
  Texture texture = Texture::grating;
  AnomalyMix mix;
  std::size_t n_train = 32;
  std::size_t n_test_normal = 20;
  std::size_t n_test_anomalous = 20;
  std::size_t anomaly_size = 12;   // side of the local square, pixels
  double anomaly_strength = 0.35;  // local intensity offset magnitude
  double global_shift = 0.4;       // frequency factor 1 + shift (or its inverse)
  double noise = 0.05;             // per-pixel Gaussian noise
  std::uint64_t seed = 0;

  void validate() const;
};

struct Dataset {
  std::vector<Tensor> train;  // [C, H, W] each, normal only
  std::vector<Tensor> test;   // [C, H, W] each
  std::vector<Tensor> masks;  // [H, W] each, 1 inside the anomalous region
  std::vector<int> labels;    // 1 = anomalous
  std::vector<AnomalyKind> kinds;
};

Dataset generate_dataset(const SyntheticSpec& spec);

/// One normal image drawn from the given stream seed.
Tensor normal_image(const SyntheticSpec& spec, std::uint64_t stream_seed);

/// Anomaly injection on a normal image; returns the mask. Exposed for tests.
Tensor inject_local(Tensor& image, std::size_t size, double strength, std::size_t top, std::size_t left);
Tensor swap_quadrants(Tensor& image);

}  // namespace fod
