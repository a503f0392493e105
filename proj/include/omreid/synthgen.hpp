#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "omreid/hash.hpp"
#include "omreid/objective.hpp"
#include "omreid/protocol.hpp"

namespace omreid {

struct SynthConfig {
  std::size_t n_identities = 30;
  std::size_t views_per_modality = 4;
  std::size_t image_h = 32;
  std::size_t image_w = 16;
  std::size_t vocab_size = 64;
  std::uint64_t seed = 1;
};

// Each identity is an attribute vector; every modality renders a view of it.
struct IdentitySpec {
  int id = 0;
  std::size_t torso_hue = 0;   // 0..4
  std::size_t leg_hue = 0;     // 0..4
  std::size_t brightness = 0;  // 0..1
  std::size_t build = 0;       // 0..2, torso width
  std::size_t hair = 0;        // 0..2
  bool hat = false;
  bool bag = false;
  std::size_t shoe = 0;        // 0..1
};

inline constexpr std::size_t kHueCount = 5;
inline constexpr std::size_t kBrightnessCount = 2;
inline constexpr std::size_t kBuildCount = 3;
inline constexpr std::size_t kHairCount = 3;
inline constexpr std::size_t kAttributeSpace =
    kHueCount * kHueCount * kBrightnessCount * kBuildCount * kHairCount * 2 * 2 * 2;

// Identities walk the attribute space along a coprime stride, so distinct
// identities never share a full attribute vector and every attribute value
// gets even coverage.
inline IdentitySpec make_identity_spec(int id, std::uint64_t seed) {
  const std::uint64_t offset = KeyedRng::from({seed, hash_str("identity.offset")}).next_u64() % kAttributeSpace;
  constexpr std::uint64_t stride = 1001;  // coprime to the attribute space
  static_assert(kAttributeSpace % 7 != 0 && kAttributeSpace % 11 != 0 && kAttributeSpace % 13 != 0);
  std::uint64_t code = (static_cast<std::uint64_t>(id) * stride + offset) % kAttributeSpace;
  IdentitySpec spec;
  spec.id = id;
  spec.torso_hue = code % kHueCount;
  code /= kHueCount;
  spec.leg_hue = code % kHueCount;
  code /= kHueCount;
  spec.brightness = code % kBrightnessCount;
  code /= kBrightnessCount;
  spec.build = code % kBuildCount;
  code /= kBuildCount;
  spec.hair = code % kHairCount;
  code /= kHairCount;
  spec.hat = (code % 2) == 1;
  code /= 2;
  spec.bag = (code % 2) == 1;
  code /= 2;
  spec.shoe = code % 2;
  return spec;
}

// Region layout of the rendered figure, in row fractions of the image. Kept
// public so the pixel-diff tests can assert which rows an attribute owns.
struct FigureLayout {
  static constexpr double hat_top = 0.00, hat_bottom = 0.08;
  static constexpr double head_top = 0.08, head_bottom = 0.24;
  static constexpr double torso_top = 0.26, torso_bottom = 0.56;
  static constexpr double leg_top = 0.58, leg_bottom = 0.90;
  static constexpr double shoe_top = 0.92, shoe_bottom = 1.00;
};

namespace detail {

// Hues chosen to stay separated both in RGB and through the luminance
// transform (their luma values are 0.21, 0.33, 0.53, 0.62, 0.80).
inline const double (*hue_palette())[3] {
  static const double palette[kHueCount][3] = {{0.15, 0.15, 0.95},
                                               {0.90, 0.10, 0.10},
                                               {0.10, 0.85, 0.10},
                                               {0.95, 0.55, 0.10},
                                               {0.92, 0.88, 0.08}};
  return palette;
}

inline double brightness_factor(std::size_t level) {
  // narrow spread keeps 1-channel luminance a usable hue proxy
  static const double levels[kBrightnessCount] = {0.90, 1.00};
  return levels[level];
}

inline double hair_tone(std::size_t hair) {
  static const double tones[kHairCount] = {0.10, 0.45, 0.80};
  return tones[hair];
}

}  // namespace detail

// View-specific rendering conditions, shared by all identities so that two
// identities rendered under the same view differ only where their attributes
// differ.
struct ViewParams {
  double brightness = 1.0;
  long shift_x = 0;
  double background = 0.1;
  double noise_amp = 0.02;
  double sk_threshold = 0.22;
};

inline ViewParams make_view_params(std::uint64_t seed, std::size_t view) {
  KeyedRng rng = KeyedRng::from({seed, hash_str("viewparams"), view});
  ViewParams vp;
  // intensity jitters stay small: absolute luminance is the only identity
  // carrier the infrared modality has
  vp.brightness = 0.98 + 0.04 * rng.next_double();
  vp.shift_x = static_cast<long>(rng.next_below(3)) - 1;
  vp.background = 0.10 + 0.04 * rng.next_double();
  vp.noise_amp = 0.02;
  vp.sk_threshold = 0.22;  // stable edge extraction across views
  return vp;
}

inline Image render_rgb(const IdentitySpec& spec, const ViewParams& vp, std::size_t h, std::size_t w,
                        std::uint64_t noise_key) {
  Image img(h, w, 3, 0.0);
  const auto* palette = detail::hue_palette();
  const double bf = detail::brightness_factor(spec.brightness) * vp.brightness;
  auto paint = [&](double top, double bottom, double cx_frac, double half_width_frac, const double* rgb,
                   double gain) {
    const std::size_t y0 = static_cast<std::size_t>(top * static_cast<double>(h));
    const std::size_t y1 = static_cast<std::size_t>(bottom * static_cast<double>(h));
    const long cx = static_cast<long>(cx_frac * static_cast<double>(w)) + vp.shift_x;
    const long hw = std::max<long>(1, static_cast<long>(half_width_frac * static_cast<double>(w)));
    for (std::size_t y = y0; y < std::min(h, y1); ++y)
      for (long x = cx - hw; x < cx + hw; ++x) {
        if (x < 0 || x >= static_cast<long>(w)) continue;
        for (std::size_t ch = 0; ch < 3; ++ch)
          img.at(y, static_cast<std::size_t>(x), ch) = std::min(1.0, rgb[ch] * gain);
      }
  };

  // background
  for (std::size_t i = 0; i < img.pix.size(); ++i) img.pix[i] = vp.background;

  const double skin[3] = {0.85, 0.68, 0.55};
  const double hair_c[3] = {detail::hair_tone(spec.hair), detail::hair_tone(spec.hair) * 0.85,
                            detail::hair_tone(spec.hair) * 0.6};
  const double shoe_c[3] = {0.15 + 0.55 * static_cast<double>(spec.shoe),
                            0.15 + 0.55 * static_cast<double>(spec.shoe),
                            0.18 + 0.5 * static_cast<double>(spec.shoe)};
  const double hat_c[3] = {0.25, 0.25, 0.3};
  const double bag_c[3] = {0.45, 0.3, 0.12};

  paint(FigureLayout::head_top, FigureLayout::head_bottom, 0.5, 0.18, skin, bf);
  paint(FigureLayout::head_top, FigureLayout::head_top + 0.06, 0.5, 0.20, hair_c, bf);
  if (spec.hat) paint(FigureLayout::hat_top, FigureLayout::hat_bottom, 0.5, 0.24, hat_c, bf);
  const double torso_hw = 0.20 + 0.07 * static_cast<double>(spec.build);
  paint(FigureLayout::torso_top, FigureLayout::torso_bottom, 0.5, torso_hw, palette[spec.torso_hue], bf);
  if (spec.bag) paint(0.30, 0.50, 0.88, 0.10, bag_c, bf);
  paint(FigureLayout::leg_top, FigureLayout::leg_bottom, 0.34, 0.10, palette[spec.leg_hue], bf);
  paint(FigureLayout::leg_top, FigureLayout::leg_bottom, 0.66, 0.10, palette[spec.leg_hue], bf);
  paint(FigureLayout::shoe_top, FigureLayout::shoe_bottom, 0.34, 0.11, shoe_c, bf);
  paint(FigureLayout::shoe_top, FigureLayout::shoe_bottom, 0.66, 0.11, shoe_c, bf);

  // identity-independent per-view sensor noise
  KeyedRng noise = KeyedRng::from({noise_key});
  for (std::size_t i = 0; i < img.pix.size(); ++i) {
    const double v = img.pix[i] + vp.noise_amp * (noise.next_double() - 0.5);
    img.pix[i] = std::clamp(v, 0.0, 1.0);
  }
  return img;
}

inline double luminance(const Image& img, std::size_t y, std::size_t x) {
  if (img.c == 1) return img.at(y, x, 0);
  return 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
}

// Fixed-pattern texture shared by every identity and view. Uniform regions
// keep an additive structure, so their intensity stays observable to a
// patch tokenizer whose layer norm discards pure scale.
inline double fixed_pattern(std::uint64_t seed, std::size_t y, std::size_t x) {
  return KeyedRng{KeyedRng::from({seed, hash_str("fpn"), y, x}).key, 0}.next_double() - 0.5;
}

// ordered-dithering threshold in (0, 1)
inline double bayer4(std::size_t y, std::size_t x) {
  static const int m[4][4] = {{0, 8, 2, 10}, {12, 4, 14, 6}, {3, 11, 1, 9}, {15, 7, 13, 5}};
  return (m[y % 4][x % 4] + 0.5) / 16.0;
}

// Luminance transform displayed the way a thermal camera renders isotherms:
// the smooth level is mixed with its ordered-dithered banding, so intensity
// shows up as a local pattern rather than a bare scale, plus sensor noise.
inline Image rgb_to_ir(const Image& rgb, std::uint64_t noise_key) {
  Image img(rgb.h, rgb.w, 1);
  KeyedRng noise = KeyedRng::from({noise_key});
  for (std::size_t y = 0; y < rgb.h; ++y)
    for (std::size_t x = 0; x < rgb.w; ++x) {
      const double level = 0.15 + 0.8 * luminance(rgb, y, x);
      const double banded = level > bayer4(y, x) ? 0.95 : 0.05;
      const double v = 0.6 * level + 0.4 * banded + 0.03 * (noise.next_double() - 0.5);
      img.at(y, x, 0) = std::clamp(v, 0.0, 1.0);
    }
  return img;
}

// hue-rotated, palette-quantized copy of the RGB rendering
inline Image rgb_to_cp(const Image& rgb) {
  Image img(rgb.h, rgb.w, 3);
  for (std::size_t y = 0; y < rgb.h; ++y)
    for (std::size_t x = 0; x < rgb.w; ++x) {
      const double r = rgb.at(y, x, 0), g = rgb.at(y, x, 1), b = rgb.at(y, x, 2);
      const double rot[3] = {0.7 * g + 0.3 * r, 0.7 * b + 0.3 * g, 0.7 * r + 0.3 * b};
      for (std::size_t ch = 0; ch < 3; ++ch)
        img.at(y, x, ch) = std::round(std::clamp(rot[ch], 0.0, 1.0) * 5.0) / 5.0;
    }
  return img;
}

// thresholded gradient-magnitude edge map over a faint paper/hatching
// texture, 1 channel
inline Image rgb_to_sk(const Image& rgb, double threshold, std::uint64_t pattern_seed) {
  Image img(rgb.h, rgb.w, 1);
  for (std::size_t y = 0; y < rgb.h; ++y)
    for (std::size_t x = 0; x < rgb.w; ++x) {
      const std::size_t yp = y + 1 < rgb.h ? y + 1 : y;
      const std::size_t ym = y > 0 ? y - 1 : y;
      const std::size_t xp = x + 1 < rgb.w ? x + 1 : x;
      const std::size_t xm = x > 0 ? x - 1 : x;
      const double gy = luminance(rgb, yp, x) - luminance(rgb, ym, x);
      const double gx = luminance(rgb, y, xp) - luminance(rgb, y, xm);
      const double mag = std::sqrt(gx * gx + gy * gy);
      const double hatch = 0.08 * fixed_pattern(pattern_seed, y, x);
      img.at(y, x, 0) = std::clamp((mag > threshold ? 0.9 : 0.05) + hatch, 0.0, 1.0);
    }
  return img;
}

// ---------------------------------------------------------------------------
// text rendering
// ---------------------------------------------------------------------------

// Word-id blocks of the synthetic vocabulary: 2 synonyms per hue for torso
// and legs, then single words per remaining attribute value.
struct SynthVocab {
  static constexpr std::size_t torso_base = kFirstWordId;                       // 2 * kHueCount words
  static constexpr std::size_t leg_base = torso_base + 2 * kHueCount;           // 2 * kHueCount words
  static constexpr std::size_t brightness_base = leg_base + 2 * kHueCount;
  static constexpr std::size_t build_base = brightness_base + kBrightnessCount;
  static constexpr std::size_t hair_base = build_base + kBuildCount;
  static constexpr std::size_t hat_base = hair_base + kHairCount;
  static constexpr std::size_t bag_base = hat_base + 2;
  static constexpr std::size_t shoe_base = bag_base + 2;
  static constexpr std::size_t required = shoe_base + 2;
};

inline std::vector<std::size_t> render_text(const IdentitySpec& spec, std::uint64_t seed, std::size_t view,
                                            std::size_t vocab_size) {
  if (vocab_size < SynthVocab::required)
    throw config_error("vocabulary of " + std::to_string(vocab_size) + " words is too small for the templates (need " +
                       std::to_string(SynthVocab::required) + ")");
  KeyedRng rng = KeyedRng::from({seed, hash_str("text"), static_cast<std::uint64_t>(spec.id), view});
  std::vector<std::size_t> ids;
  ids.push_back(kBosId);
  ids.push_back(SynthVocab::torso_base + 2 * spec.torso_hue + rng.next_below(2));
  ids.push_back(SynthVocab::leg_base + 2 * spec.leg_hue + rng.next_below(2));
  ids.push_back(SynthVocab::brightness_base + spec.brightness);
  ids.push_back(SynthVocab::hair_base + spec.hair);
  // secondary attributes are mentioned per view with probability 0.8, the
  // way free-form descriptions omit details
  if (rng.next_double() < 0.8) ids.push_back(SynthVocab::build_base + spec.build);
  if (rng.next_double() < 0.8) ids.push_back(SynthVocab::hat_base + (spec.hat ? 1 : 0));
  if (rng.next_double() < 0.8) ids.push_back(SynthVocab::bag_base + (spec.bag ? 1 : 0));
  if (rng.next_double() < 0.8) ids.push_back(SynthVocab::shoe_base + spec.shoe);
  ids.push_back(kEosId);
  return ids;
}

// ---------------------------------------------------------------------------
// dataset assembly
// ---------------------------------------------------------------------------

struct SampleRecord {
  int id = 0;
  ModalityId modality = ModalityId::R;
  std::string path;
  int camera = 0;
  int view = 0;
  std::string sha256;
};

struct DatasetManifest {
  std::string split = "all";
  std::uint64_t seed = 0;
  std::vector<SampleRecord> records;
  std::map<ModalityId, std::size_t> counts;
};

struct SynthDataset {
  SynthConfig config;
  DatasetManifest manifest;
  std::vector<MixedSample> samples;  // aligned with manifest.records
};

// Serialized payload bytes; the manifest hash covers exactly what lands on
// disk.
inline std::string pnm_bytes(const Image& img) {
  std::ostringstream os;
  os << (img.c == 1 ? "P5" : "P6") << "\n" << img.w << " " << img.h << "\n255\n";
  for (double v : img.pix) os.put(static_cast<char>(to_byte(v)));
  return os.str();
}

inline std::string text_line(const std::vector<std::size_t>& ids) {
  std::ostringstream os;
  for (std::size_t i = 0; i < ids.size(); ++i) os << (i ? " " : "") << ids[i];
  os << "\n";
  return os.str();
}

inline MixedSample make_sample(const SynthConfig& cfg, int id, ModalityId mod, std::size_t view) {
  const IdentitySpec spec = make_identity_spec(id, cfg.seed);
  const int camera = static_cast<int>(view % 2);
  if (mod == ModalityId::T) {
    TextSample t;
    t.token_ids = render_text(spec, cfg.seed, view, cfg.vocab_size);
    t.identity = id;
    t.camera = camera;
    t.view = static_cast<int>(view);
    return t;
  }
  const ViewParams vp = make_view_params(cfg.seed, view);
  const std::uint64_t rgb_noise_key =
      KeyedRng::from({cfg.seed, hash_str("noise.rgb"), view}).key;
  Image rgb = render_rgb(spec, vp, cfg.image_h, cfg.image_w, rgb_noise_key);
  VisualSample v;
  v.modality = mod;
  v.identity = id;
  v.camera = camera;
  v.view = static_cast<int>(view);
  switch (mod) {
    case ModalityId::R: v.pixels = std::move(rgb); break;
    case ModalityId::I:
      v.pixels = rgb_to_ir(rgb, KeyedRng::from({cfg.seed, hash_str("noise.ir"), view}).key);
      break;
    case ModalityId::C: v.pixels = rgb_to_cp(rgb); break;
    case ModalityId::S: v.pixels = rgb_to_sk(rgb, vp.sk_threshold, cfg.seed); break;
    default: throw data_error("unexpected modality");
  }
  return v;
}

inline std::string sample_rel_path(int id, ModalityId mod, std::size_t view) {
  std::ostringstream os;
  if (mod == ModalityId::T) {
    os << "texts/id" << id << "/text_v" << view << ".txt";
  } else {
    os << "images/id" << id << "/" << modality_name(mod) << "_v" << view
       << (modality_channels(mod) == 1 ? ".pgm" : ".ppm");
  }
  return os.str();
}

inline std::string payload_bytes(const MixedSample& s) {
  if (std::holds_alternative<TextSample>(s)) return text_line(std::get<TextSample>(s).token_ids);
  return pnm_bytes(std::get<VisualSample>(s).pixels);
}

// Deterministic five-modal dataset: every identity gets views_per_modality
// samples in each modality, all draws keyed by (seed, identity, modality,
// view).
inline SynthDataset generate(const SynthConfig& cfg) {
  if (cfg.n_identities == 0) throw config_error("need at least one identity");
  SynthDataset ds;
  ds.config = cfg;
  ds.manifest.seed = cfg.seed;
  for (std::size_t id = 0; id < cfg.n_identities; ++id) {
    for (ModalityId mod : kAllModalities) {
      for (std::size_t view = 0; view < cfg.views_per_modality; ++view) {
        MixedSample s = make_sample(cfg, static_cast<int>(id), mod, view);
        SampleRecord rec;
        rec.id = static_cast<int>(id);
        rec.modality = mod;
        rec.path = sample_rel_path(static_cast<int>(id), mod, view);
        rec.camera = static_cast<int>(view % 2);
        rec.view = static_cast<int>(view);
        rec.sha256 = sha256_hex(payload_bytes(s));
        ds.manifest.records.push_back(std::move(rec));
        ds.manifest.counts[mod]++;
        ds.samples.push_back(std::move(s));
      }
    }
  }
  return ds;
}

// Identity-disjoint split; identities are shuffled by the seed and the first
// floor(fraction * n) become the training set.
inline std::pair<DatasetManifest, DatasetManifest> split(const DatasetManifest& manifest,
                                                         double train_fraction, std::uint64_t seed) {
  std::set<int> identity_set;
  for (const SampleRecord& r : manifest.records) identity_set.insert(r.id);
  std::vector<int> identities(identity_set.begin(), identity_set.end());
  KeyedRng rng = KeyedRng::from({seed, hash_str("split")});
  for (std::size_t i = identities.size(); i > 1; --i)
    std::swap(identities[i - 1], identities[rng.next_below(i)]);
  const std::size_t n_train = static_cast<std::size_t>(train_fraction * static_cast<double>(identities.size()));
  if (n_train == 0 || n_train == identities.size())
    throw config_error("train fraction " + std::to_string(train_fraction) + " produces an empty split");
  std::set<int> train_ids(identities.begin(), identities.begin() + static_cast<long>(n_train));
  DatasetManifest train, test;
  train.split = "train";
  test.split = "test";
  train.seed = manifest.seed;
  test.seed = manifest.seed;
  for (const SampleRecord& r : manifest.records) {
    DatasetManifest& dst = train_ids.count(r.id) ? train : test;
    dst.records.push_back(r);
    dst.counts[r.modality]++;
  }
  return {train, test};
}

// Applies a split manifest back onto the in-memory dataset.
inline SynthDataset subset(const SynthDataset& ds, const DatasetManifest& part) {
  std::map<std::string, std::size_t> by_path;
  for (std::size_t i = 0; i < ds.manifest.records.size(); ++i) by_path[ds.manifest.records[i].path] = i;
  SynthDataset out;
  out.config = ds.config;
  out.manifest = part;
  for (const SampleRecord& r : part.records) {
    auto it = by_path.find(r.path);
    if (it == by_path.end()) throw data_error("split record not present in dataset: " + r.path);
    out.samples.push_back(ds.samples[it->second]);
  }
  return out;
}

inline std::vector<ProtocolSample> protocol_view(const SynthDataset& ds) {
  std::vector<ProtocolSample> out;
  for (std::size_t i = 0; i < ds.manifest.records.size(); ++i)
    out.push_back(ProtocolSample{ds.manifest.records[i].modality, ds.manifest.records[i].id, i});
  return out;
}

}  // namespace omreid
