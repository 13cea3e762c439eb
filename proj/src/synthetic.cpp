// SPDX-License-Identifier: Apache-2.0
#include "fod/synthetic.hpp"

#include <charconv>
#include <cmath>
#include <numbers>

#include "fod/errors.hpp"
#include "fod/rng.hpp"

namespace fod {

std::string_view to_string(Texture t) { return t == Texture::grating ? "grating" : "noise"; }

Texture parse_texture(std::string_view s) {
  if (s == "grating") return Texture::grating;
  if (s == "noise") return Texture::noise;
  throw ConfigError("unknown texture '" + std::string(s) + "' (expected grating|noise)");
}

std::string_view to_string(AnomalyKind k) {
  switch (k) {
    case AnomalyKind::none: return "none";
    case AnomalyKind::local: return "local";
    case AnomalyKind::global: return "global";
    case AnomalyKind::quadrant: return "quadrant";
  }
  return "?";
}

AnomalyKind parse_anomaly_kind(std::string_view s) {
  if (s == "none") return AnomalyKind::none;
  if (s == "local") return AnomalyKind::local;
  if (s == "global") return AnomalyKind::global;
  if (s == "quadrant") return AnomalyKind::quadrant;
  throw ConfigError("unknown anomaly kind '" + std::string(s) + "'");
}

AnomalyMix AnomalyMix::parse(std::string_view s) {
  AnomalyMix mix{0, 0, 0};
  while (!s.empty()) {
    const auto comma = s.find(',');
    const std::string_view item = s.substr(0, comma);
    s = comma == std::string_view::npos ? std::string_view{} : s.substr(comma + 1);
    const auto colon = item.find(':');
    if (colon == std::string_view::npos) throw ConfigError("anomaly_mix item '" + std::string(item) + "' lacks ':'");
    const std::string_view name = item.substr(0, colon), num = item.substr(colon + 1);
    std::size_t w = 0;
    const auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), w);
    if (ec != std::errc{} || ptr != num.data() + num.size())
      throw ConfigError("anomaly_mix weight '" + std::string(num) + "' is not a non-negative integer");
    switch (parse_anomaly_kind(name)) {
      case AnomalyKind::local: mix.local = w; break;
      case AnomalyKind::global: mix.global = w; break;
      case AnomalyKind::quadrant: mix.quadrant = w; break;
      case AnomalyKind::none: throw ConfigError("anomaly_mix cannot weight 'none'");
    }
  }
  if (mix.total() == 0) throw ConfigError("anomaly_mix needs at least one positive weight");
  return mix;
}

std::string AnomalyMix::to_string() const {
  return "local:" + std::to_string(local) + ",global:" + std::to_string(global) +
         ",quadrant:" + std::to_string(quadrant);
}

std::vector<AnomalyKind> AnomalyMix::schedule(std::size_t n) const {
  const std::size_t w[3] = {local, global, quadrant};
  const AnomalyKind k[3] = {AnomalyKind::local, AnomalyKind::global, AnomalyKind::quadrant};
  std::size_t count[3], rem[3], used = 0;
  for (int i = 0; i < 3; ++i) {
    count[i] = n * w[i] / total();
    rem[i] = n * w[i] % total();
    used += count[i];
  }
  while (used < n) {  // largest remainder, first kind wins ties
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (rem[i] > rem[best]) best = i;
    ++count[best];
    rem[best] = 0;
    ++used;
  }
  std::vector<AnomalyKind> out;
  for (int i = 0; i < 3; ++i) out.insert(out.end(), count[i], k[i]);
  return out;
}

void SyntheticSpec::validate() const {
  if (height == 0 || width == 0 || height % 16 || width % 16)
    throw ConfigError("image extents must be positive multiples of 16");
  if (channels == 0) throw ConfigError("channels must be >= 1");
  if (n_train == 0) throw ConfigError("n_train must be >= 1");
  if (n_test_normal == 0 || n_test_anomalous == 0)
    throw ConfigError("the test set needs normal and anomalous images");
  if (anomaly_size == 0 || anomaly_size > height || anomaly_size > width)
    throw ConfigError("anomaly_size must be in [1, min(height, width)]");
  if (!(global_shift > 0.0) || !(noise >= 0.0) || !std::isfinite(anomaly_strength))
    throw ConfigError("global_shift must be > 0 and noise >= 0");
  if (mix.total() == 0) throw ConfigError("anomaly_mix needs at least one positive weight");
}

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kAmplitude = 0.5;
constexpr double kCycles = 6.0;          // grating periods across the width
constexpr double kAngle = kPi / 6.0;     // grating orientation
constexpr double kPhaseJitter = 0.4;     // radians, per image
constexpr std::size_t kCell = 8;         // value-noise lattice spacing
constexpr std::size_t kLattice = 64;     // periodic lattice extent

struct Draw {
  double phase = 0.0;
  double scale = 1.0;  // texture-coordinate scale about the image centre
  Tensor lattice;      // noise texture only
};

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

double value_noise(const Tensor& lat, double u, double v) {
  const double fu = std::floor(u), fv = std::floor(v);
  const auto wrap = [](double a) {
    const auto n = static_cast<long long>(kLattice);
    return static_cast<std::size_t>(((static_cast<long long>(a) % n) + n) % n);
  };
  const std::size_t i0 = wrap(fv), i1 = wrap(fv + 1), j0 = wrap(fu), j1 = wrap(fu + 1);
  const double tu = smoothstep(u - fu), tv = smoothstep(v - fv);
  const double top = (1 - tu) * lat.at(i0, j0) + tu * lat.at(i0, j1);
  const double bot = (1 - tu) * lat.at(i1, j0) + tu * lat.at(i1, j1);
  return (1 - tv) * top + tv * bot;
}

Draw draw_params(const SyntheticSpec& spec, Rng& rng) {
  Draw d;
  d.phase = rng.uniform(-kPhaseJitter, kPhaseJitter);
  if (spec.texture == Texture::noise) {
    // Shared base pattern plus a small per-image perturbation.
    Rng base(derive_seed(spec.seed, 7));
    d.lattice = base.uniform_tensor({kLattice, kLattice}, -1.0, 1.0);
    for (auto& v : d.lattice.data()) v = kAmplitude * v + 0.1 * rng.normal();
  }
  return d;
}

Tensor render(const SyntheticSpec& spec, const Draw& d, Rng& rng) {
  const std::size_t H = spec.height, W = spec.width;
  Tensor img(Shape{spec.channels, H, W});
  const double cy = 0.5 * static_cast<double>(H - 1), cx = 0.5 * static_cast<double>(W - 1);
  const double k = 2.0 * kPi * kCycles / static_cast<double>(W);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const double ty = cy + (static_cast<double>(y) - cy) * d.scale;
      const double tx = cx + (static_cast<double>(x) - cx) * d.scale;
      double tex;
      if (spec.texture == Texture::grating)
        tex = kAmplitude * std::sin(k * (tx * std::cos(kAngle) + ty * std::sin(kAngle)) + d.phase);
      else
        tex = value_noise(d.lattice, tx / kCell, ty / kCell);
      // Position-dependent illumination makes the layout of a normal image recognizable.
      const double illum = 0.4 * static_cast<double>(x) / static_cast<double>(W - 1) +
                           0.3 * static_cast<double>(y) / static_cast<double>(H - 1);
      for (std::size_t c = 0; c < spec.channels; ++c) {
        const double gain = 1.0 - 0.2 * static_cast<double>(c) / static_cast<double>(spec.channels);
        img[(c * H + y) * W + x] = gain * tex + illum + spec.noise * rng.normal();
      }
    }
  return img;
}

}  // namespace

Tensor normal_image(const SyntheticSpec& spec, std::uint64_t stream_seed) {
  Rng rng(stream_seed);
  const Draw d = draw_params(spec, rng);
  return render(spec, d, rng);
}

Tensor inject_local(Tensor& image, std::size_t size, double strength, std::size_t top, std::size_t left) {
  const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  if (top + size > H || left + size > W) throw DimensionError("inject_local: square leaves the image");
  Tensor mask(Shape{H, W});
  for (std::size_t y = top; y < top + size; ++y)
    for (std::size_t x = left; x < left + size; ++x) {
      mask.at(y, x) = 1.0;
      for (std::size_t c = 0; c < C; ++c) image[(c * H + y) * W + x] += strength;
    }
  return mask;
}

Tensor swap_quadrants(Tensor& image) {
  const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  const std::size_t h = H / 2, w = W / 2;
  Tensor mask(Shape{H, W});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        std::swap(image[(c * H + y) * W + x], image[(c * H + y + h) * W + x + w]);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) mask.at(y, x) = mask.at(y + h, x + w) = 1.0;
  return mask;
}

Dataset generate_dataset(const SyntheticSpec& spec) {
  spec.validate();
  Dataset ds;
  for (std::size_t i = 0; i < spec.n_train; ++i)
    ds.train.push_back(normal_image(spec, derive_seed(spec.seed, 10000 + i)));
  for (std::size_t i = 0; i < spec.n_test_normal; ++i) {
    ds.test.push_back(normal_image(spec, derive_seed(spec.seed, 20000 + i)));
    ds.masks.emplace_back(Shape{spec.height, spec.width});
    ds.labels.push_back(0);
    ds.kinds.push_back(AnomalyKind::none);
  }
  const auto kinds = spec.mix.schedule(spec.n_test_anomalous);
  for (std::size_t i = 0; i < kinds.size(); ++i) {
    Rng rng(derive_seed(spec.seed, 30000 + i));
    Draw d = draw_params(spec, rng);
    Tensor mask;
    Tensor img;
    switch (kinds[i]) {
      case AnomalyKind::local: {
        img = render(spec, d, rng);
        const std::size_t top = rng.index(spec.height - spec.anomaly_size + 1);
        const std::size_t left = rng.index(spec.width - spec.anomaly_size + 1);
        const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        mask = inject_local(img, spec.anomaly_size, sign * spec.anomaly_strength, top, left);
        break;
      }
      case AnomalyKind::global: {
        const double f = 1.0 + spec.global_shift;
        d.scale = rng.uniform() < 0.5 ? f : 1.0 / f;
        img = render(spec, d, rng);
        mask = Tensor(Shape{spec.height, spec.width}, 1.0);
        break;
      }
      case AnomalyKind::quadrant:
        img = render(spec, d, rng);
        mask = swap_quadrants(img);
        break;
      case AnomalyKind::none: break;
    }
    ds.test.push_back(std::move(img));
    ds.masks.push_back(std::move(mask));
    ds.labels.push_back(1);
    ds.kinds.push_back(kinds[i]);
  }
  return ds;
}

}  // namespace fod
