#pragma once

// Deterministic synthetic 2D "organ" dataset: a smooth star-convex blob as
// the segmentation target, plus dimmer distractor blobs, an illumination
// gradient and Gaussian noise. Every sample is a pure function of
// (spec.seed, index).

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mednca/pgm.hpp"
#include "mednca/pipeline.hpp"
#include "mednca/rng.hpp"

namespace mednca {

struct SynthSpec {
  std::uint64_t seed = 0;
  i64 count = 250;
  i64 height = 128;
  i64 width = 128;
  double organ_radius_lo = 0.12;  // fraction of min(H, W)
  double organ_radius_hi = 0.28;
  double deform_amplitude = 0.3;
  double noise_sigma = 0.05;
  i64 n_distractors = 3;

  void validate() const {
    require(height >= 16 && width >= 16, "SynthSpec: H, W must be >= 16");
    require(height % 4 == 0 && width % 4 == 0, "SynthSpec: H, W must be divisible by 4");
    require(organ_radius_lo > 0 && organ_radius_hi >= organ_radius_lo,
            "SynthSpec: invalid radius range");
    require(noise_sigma >= 0, "SynthSpec: noise_sigma must be >= 0");
  }
};

namespace synth_detail {

// r(theta) = r0 * (1 + amp * sum_{k=2..5} a_k cos(k theta + phi_k)), clamped positive
struct StarBlob {
  double cx, cy, r0;
  double a[4], phi[4];
  double amp;

  double radius(double theta) const {
    double m = 1.0;
    for (int k = 0; k < 4; ++k) m += amp * a[k] * std::cos((k + 2) * theta + phi[k]);
    return r0 * std::max(m, 0.15);
  }

  bool contains(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double d = std::sqrt(dx * dx + dy * dy);
    if (d < 1e-9) return true;
    return d < radius(std::atan2(dy, dx));
  }

  double max_radius() const {
    double s = 0;
    for (int k = 0; k < 4; ++k) s += std::abs(amp * a[k]);
    return r0 * (1.0 + s);
  }
};

inline StarBlob sample_blob(Rng& rng, const SynthSpec& spec) {
  const double minside = static_cast<double>(std::min(spec.height, spec.width));
  StarBlob b;
  b.r0 = rng.uniform(spec.organ_radius_lo, spec.organ_radius_hi) * minside;
  b.amp = spec.deform_amplitude;
  for (int k = 0; k < 4; ++k) {
    b.a[k] = rng.uniform(-1.0, 1.0) / (k + 2);  // higher harmonics weaker
    b.phi[k] = rng.uniform(0.0, 6.283185307179586);
  }
  const double margin = b.max_radius() * 0.6;
  b.cx = rng.uniform(margin, spec.width - margin);
  b.cy = rng.uniform(margin, spec.height - margin);
  return b;
}

}  // namespace synth_detail

template <typename T>
TrainSample<T> generate_sample(const SynthSpec& spec, i64 index) {
  spec.validate();
  require(index >= 0 && index < spec.count, "generate_sample: index out of range");
  const i64 H = spec.height, W = spec.width;
  Rng rng(mix64(spec.seed, static_cast<std::uint64_t>(index), 0xda7aULL));

  synth_detail::StarBlob organ = synth_detail::sample_blob(rng, spec);

  // distractors: smaller circles, dimmer than background, never overlapping
  // the organ or each other, excluded from the mask. Intensities span
  // [0, 0.25] and [0.45, 0.55], skipping a band around the organ's 0.35 so
  // the organ stays identifiable; the dark end puts near-black regions in
  // distribution (air background in real scans).
  struct Disk { double cx, cy, r, intensity; };
  std::vector<Disk> distractors;
  const double minside = static_cast<double>(std::min(H, W));
  for (i64 d = 0; d < spec.n_distractors; ++d) {
    for (int attempt = 0; attempt < 40; ++attempt) {
      Disk disk;
      disk.r = rng.uniform(0.03, 0.08) * minside;
      disk.cx = rng.uniform(disk.r + 1, W - disk.r - 1);
      disk.cy = rng.uniform(disk.r + 1, H - disk.r - 1);
      const double u = rng.uniform(0.0, 0.35);
      disk.intensity = u < 0.25 ? u : 0.45 + (u - 0.25);
      const double dx = disk.cx - organ.cx, dy = disk.cy - organ.cy;
      if (std::sqrt(dx * dx + dy * dy) < organ.max_radius() + disk.r + 2) continue;
      bool clash = false;
      for (const auto& o : distractors) {
        const double ox = disk.cx - o.cx, oy = disk.cy - o.cy;
        if (std::sqrt(ox * ox + oy * oy) < disk.r + o.r + 2) { clash = true; break; }
      }
      if (clash) continue;
      distractors.push_back(disk);
      break;
    }
  }

  // smooth illumination gradient: linear ramp in a random direction
  const double grad_mag = rng.uniform(-0.08, 0.08);
  const double grad_dir = rng.uniform(0.0, 6.283185307179586);
  const double gx = std::cos(grad_dir), gy = std::sin(grad_dir);

  TrainSample<T> sample;
  sample.image = Tensor<T>({1, H, W});
  sample.mask = Tensor<T>({1, H, W});
  for (i64 y = 0; y < H; ++y)
    for (i64 x = 0; x < W; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const bool inside = organ.contains(px, py);
      double v = inside ? 0.35 : 0.65;
      if (!inside)
        for (const auto& d : distractors) {
          const double dx = px - d.cx, dy = py - d.cy;
          if (dx * dx + dy * dy < d.r * d.r) { v = d.intensity; break; }
        }
      const double u = 2.0 * px / W - 1.0, w = 2.0 * py / H - 1.0;
      v += grad_mag * (u * gx + w * gy);
      v += spec.noise_sigma * rng.gaussian();
      sample.image.at3(0, y, x) = static_cast<T>(std::clamp(v, 0.0, 1.0));
      sample.mask.at3(0, y, x) = inside ? T(1) : T(0);
    }
  return sample;
}

// ---------------------------------------------------------------------------
// Dataset manifest: `split<TAB>image_path<TAB>mask_path<TAB>seed<TAB>index`

struct ManifestEntry {
  std::string split;
  std::string image_path;
  std::string mask_path;
  std::uint64_t seed = 0;
  i64 index = 0;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;

  std::vector<ManifestEntry> split(const std::string& name) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : entries)
      if (e.split == name) out.push_back(e);
    return out;
  }
};

inline void write_manifest(const std::string& path, const DatasetManifest& m) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("manifest: cannot open for writing: " + path);
  for (const auto& e : m.entries)
    out << e.split << '\t' << e.image_path << '\t' << e.mask_path << '\t' << e.seed << '\t'
        << e.index << '\n';
}

inline DatasetManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("manifest: cannot open: " + path);
  DatasetManifest m;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    ManifestEntry e;
    std::string seed_str, index_str;
    if (!std::getline(ss, e.split, '\t') || !std::getline(ss, e.image_path, '\t') ||
        !std::getline(ss, e.mask_path, '\t') || !std::getline(ss, seed_str, '\t') ||
        !std::getline(ss, index_str, '\t'))
      throw std::runtime_error("manifest: malformed line: " + line);
    e.seed = std::stoull(seed_str);
    e.index = std::stoll(index_str);
    m.entries.push_back(e);
  }
  return m;
}

// Generates PGM pairs + manifest under out_dir. Split assignment is by index:
// the first 80% train, next 10% val, last 10% test.
inline DatasetManifest generate_dataset(const SynthSpec& spec, const std::string& out_dir) {
  spec.validate();
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  DatasetManifest m;
  const i64 n_train = spec.count * 8 / 10;
  const i64 n_val = spec.count / 10;
  for (i64 i = 0; i < spec.count; ++i) {
    TrainSample<float> s = generate_sample<float>(spec, i);
    ManifestEntry e;
    e.split = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");
    e.seed = spec.seed;
    e.index = i;
    char name[64];
    std::snprintf(name, sizeof(name), "sample_%05lld", static_cast<long long>(i));
    e.image_path = std::string(name) + "_img.pgm";
    e.mask_path = std::string(name) + "_mask.pgm";
    write_pgm_image(out_dir + "/" + e.image_path, s.image);
    write_pgm_mask(out_dir + "/" + e.mask_path, s.mask);
    m.entries.push_back(e);
  }
  write_manifest(out_dir + "/manifest.tsv", m);
  return m;
}

template <typename T>
std::vector<TrainSample<T>> load_split(const DatasetManifest& m, const std::string& dir,
                                       const std::string& split) {
  std::vector<TrainSample<T>> out;
  for (const auto& e : m.split(split)) {
    TrainSample<T> s;
    s.image = read_pgm_image<T>(dir + "/" + e.image_path);
    s.mask = read_pgm_mask<T>(dir + "/" + e.mask_path);
    require(s.image.same_shape(s.mask), "dataset: image/mask shape mismatch");
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace mednca
