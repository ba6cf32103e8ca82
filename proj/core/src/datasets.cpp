// Copyright (c) 2026, The dismae Authors
// SPDX-License-Identifier: Apache-2.0

#include "dismae/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "dismae/config.hpp"
#include "dismae/error.hpp"
#include "dismae/hash.hpp"
#include "dismae/png_io.hpp"
#include "dismae/rng.hpp"

namespace fs = std::filesystem;

namespace dismae {

namespace {

constexpr std::array<std::array<const char*, 7>, 10> kGlyphRows = {{
    {"01110", "10001", "10011", "10101", "11001", "10001", "01110"},
    {"00100", "01100", "00100", "00100", "00100", "00100", "01110"},
    {"01110", "10001", "00001", "00010", "00100", "01000", "11111"},
    {"11111", "00010", "00100", "00010", "00001", "10001", "01110"},
    {"00010", "00110", "01010", "10010", "11111", "00010", "00010"},
    {"11111", "10000", "11110", "00001", "00001", "10001", "01110"},
    {"00110", "01000", "10000", "11110", "10001", "10001", "01110"},
    {"11111", "00001", "00010", "00100", "01000", "01000", "01000"},
    {"01110", "10001", "10001", "01110", "10001", "10001", "01110"},
    {"01110", "10001", "10001", "01111", "00001", "00010", "01100"},
}};

std::array<std::array<std::uint8_t, 35>, 10> build_glyphs() {
  std::array<std::array<std::uint8_t, 35>, 10> out{};
  for (int c = 0; c < 10; ++c)
    for (int r = 0; r < 7; ++r)
      for (int k = 0; k < 5; ++k)
        out[static_cast<std::size_t>(c)][static_cast<std::size_t>(r * 5 + k)] =
            kGlyphRows[static_cast<std::size_t>(c)][static_cast<std::size_t>(r)][k] == '1';
  return out;
}

double channel_distance(const Rgb& a, const Rgb& b) {
  double d = 0.0;
  for (int c = 0; c < 3; ++c) d = std::max(d, std::abs(a[static_cast<std::size_t>(c)] - b[static_cast<std::size_t>(c)]));
  return d;
}

std::string class_dir(int c) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%02d", c);
  return buf;
}

std::string file_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d.png", i);
  return buf;
}

void append_image(MultiDomainDataset& ds, const Image8& img) {
  for (std::uint8_t v : img.pixels) ds.pixels.push_back(v / 255.0);
}

}  // namespace

const std::array<std::uint8_t, 35>& glyph_bitmap(int c) {
  static const auto glyphs = build_glyphs();
  if (c < 0 || c >= 10) throw ContractError("glyph_bitmap: class index out of range");
  return glyphs[static_cast<std::size_t>(c)];
}

void FactorSpec::validate() const {
  if (num_classes < 1 || num_classes > 10) throw ConfigError("data spec: num_classes must lie in [1, 10]");
  if (domains.size() < 2) throw ConfigError("data spec: at least 2 domains required");
  if (samples_per_class_per_domain < 1) throw ConfigError("data spec: samples_per_class_per_domain must be >= 1");
  if (image_size < 7) throw ConfigError("data spec: image_size must be >= 7 to hold a glyph");
  if (!(noise_std >= 0.0)) throw ConfigError("data spec: noise_std must be >= 0");
  std::set<std::string> names;
  for (const auto& d : domains) {
    if (d.name.empty() || d.name.find('/') != std::string::npos)
      throw ConfigError("data spec: invalid domain name '" + d.name + "'");
    if (!names.insert(d.name).second) throw ConfigError("data spec: duplicate domain name '" + d.name + "'");
    if (d.foreground.empty() || d.background.empty())
      throw ConfigError("data spec: domain '" + d.name + "' needs foreground and background colors");
    for (const auto* set : {&d.foreground, &d.background})
      for (const Rgb& c : *set)
        for (double v : c)
          if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("data spec: color channel outside [0,1] in '" + d.name + "'");
  }
  for (std::size_t a = 0; a < domains.size(); ++a)
    for (std::size_t b = a + 1; b < domains.size(); ++b) {
      std::vector<Rgb> ca = domains[a].foreground, cb = domains[b].foreground;
      ca.insert(ca.end(), domains[a].background.begin(), domains[a].background.end());
      cb.insert(cb.end(), domains[b].background.begin(), domains[b].background.end());
      for (const Rgb& x : ca)
        for (const Rgb& y : cb)
          if (channel_distance(x, y) < kPaletteSeparation - 1e-9)
            throw ConfigError("data spec: palettes of domains '" + domains[a].name + "' and '" + domains[b].name +
                              "' are not disjoint (a color pair is closer than 0.2 in every channel)");
    }
}

FactorSpec default_factor_spec() {
  FactorSpec s;
  s.domains = {
      {"crimson", {{1.0, 0.8, 0.6}, {1.0, 1.0, 0.4}}, {{0.6, 0.0, 0.0}, {0.8, 0.0, 0.2}}, false},
      {"forest", {{0.6, 1.0, 0.6}, {0.8, 1.0, 0.8}}, {{0.0, 0.4, 0.0}, {0.2, 0.6, 0.0}}, false},
      {"ocean", {{0.6, 0.8, 1.0}, {1.0, 1.0, 1.0}}, {{0.0, 0.0, 0.6}, {0.0, 0.2, 0.8}}, false},
      {"violet", {{1.0, 0.6, 1.0}, {1.0, 0.8, 1.0}}, {{0.4, 0.0, 0.4}, {0.6, 0.2, 0.6}}, false},
  };
  return s;
}

ImageBatch MultiDomainDataset::batch(std::span<const int> indices) const {
  ImageBatch b;
  b.count = static_cast<int>(indices.size());
  b.size = image_size;
  b.channels = channels;
  const std::size_t stride = static_cast<std::size_t>(image_size) * image_size * channels;
  b.pixels.reserve(stride * indices.size());
  for (int i : indices) {
    if (i < 0 || i >= size()) throw ContractError("dataset batch: index out of range");
    auto first = pixels.begin() + static_cast<std::ptrdiff_t>(stride * static_cast<std::size_t>(i));
    b.pixels.insert(b.pixels.end(), first, first + static_cast<std::ptrdiff_t>(stride));
    b.domains.push_back(domains[static_cast<std::size_t>(i)]);
    if (labeled()) b.labels.push_back(labels[static_cast<std::size_t>(i)]);
  }
  return b;
}

MultiDomainDataset MultiDomainDataset::subset(std::span<const int> indices) const {
  MultiDomainDataset out;
  out.domain_names = domain_names;
  out.class_names = class_names;
  out.image_size = image_size;
  out.channels = channels;
  const std::size_t stride = static_cast<std::size_t>(image_size) * image_size * channels;
  for (int i : indices) {
    if (i < 0 || i >= size()) throw ContractError("dataset subset: index out of range");
    out.ids.push_back(ids[static_cast<std::size_t>(i)]);
    out.domains.push_back(domains[static_cast<std::size_t>(i)]);
    if (labeled()) out.labels.push_back(labels[static_cast<std::size_t>(i)]);
    auto first = pixels.begin() + static_cast<std::ptrdiff_t>(stride * static_cast<std::size_t>(i));
    out.pixels.insert(out.pixels.end(), first, first + static_cast<std::ptrdiff_t>(stride));
  }
  return out;
}

MultiDomainDataset MultiDomainDataset::select_domains(std::vector<std::string> names) const {
  std::sort(names.begin(), names.end());
  names.erase(std::unique(names.begin(), names.end()), names.end());
  std::map<int, int> remap;
  for (std::size_t k = 0; k < names.size(); ++k) {
    auto it = std::find(domain_names.begin(), domain_names.end(), names[k]);
    if (it == domain_names.end()) throw ConfigError("unknown domain '" + names[k] + "'");
    remap[static_cast<int>(it - domain_names.begin())] = static_cast<int>(k);
  }
  std::vector<int> keep;
  for (int i = 0; i < size(); ++i)
    if (remap.contains(domains[static_cast<std::size_t>(i)])) keep.push_back(i);
  MultiDomainDataset out = subset(keep);
  out.domain_names = names;
  for (int& d : out.domains) d = remap.at(d);
  return out;
}

std::vector<int> MultiDomainDataset::indices_of_domain(int d) const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i)
    if (domains[static_cast<std::size_t>(i)] == d) out.push_back(i);
  return out;
}

MultiDomainDataset generate_factored_dataset(const FactorSpec& spec, const fs::path& root) {
  spec.validate();
  const int S = spec.image_size;
  const int gh = static_cast<int>(std::lround(0.7 * S));
  const int gw = std::max(5, static_cast<int>(std::lround(gh * 5.0 / 7.0)));
  const int jitter = static_cast<int>(std::floor(0.1 * S));

  std::vector<PaletteSpec> ordered = spec.domains;
  std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) { return a.name < b.name; });

  MultiDomainDataset ds;
  ds.image_size = S;
  ds.channels = 3;
  for (const auto& d : ordered) ds.domain_names.push_back(d.name);
  for (int c = 0; c < spec.num_classes; ++c) ds.class_names.push_back(class_dir(c));

  nlohmann::json files = nlohmann::json::array();
  fs::create_directories(root);
  for (std::size_t di = 0; di < ordered.size(); ++di) {
    const PaletteSpec& pal = ordered[di];
    for (int c = 0; c < spec.num_classes; ++c) {
      const auto& glyph = glyph_bitmap(c);
      for (int i = 0; i < spec.samples_per_class_per_domain; ++i) {
        Rng rng = Rng::derive(spec.seed, {stable_hash(pal.name),
                                          static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(i)});
        const Rgb fg = pal.foreground[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(pal.foreground.size())))];
        const Rgb bg = pal.background[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(pal.background.size())))];
        const int jy = jitter > 0 ? rng.uniform_int(2 * jitter + 1) - jitter : 0;
        const int jx = jitter > 0 ? rng.uniform_int(2 * jitter + 1) - jitter : 0;
        const int y0 = (S - gh) / 2 + jy, x0 = (S - gw) / 2 + jx;
        Image8 img;
        img.width = S;
        img.height = S;
        img.channels = 3;
        img.pixels.resize(static_cast<std::size_t>(S) * S * 3);
        for (int y = 0; y < S; ++y)
          for (int x = 0; x < S; ++x) {
            bool ink = false;
            if (y >= y0 && y < y0 + gh && x >= x0 && x < x0 + gw) {
              const int gr = (y - y0) * 7 / gh, gc = (x - x0) * 5 / gw;
              ink = glyph[static_cast<std::size_t>(gr * 5 + gc)] != 0;
            }
            const double shade = (!ink && pal.texture && ((x / 2 + y / 2) % 2 == 1)) ? 0.85 : 1.0;
            for (int ch = 0; ch < 3; ++ch) {
              double v = (ink ? fg : bg)[static_cast<std::size_t>(ch)] * shade;
              if (spec.noise_std > 0.0) v += spec.noise_std * rng.normal();
              img.pixels[(static_cast<std::size_t>(y) * S + x) * 3 + static_cast<std::size_t>(ch)] = to_byte(v);
            }
          }
        const std::string rel = pal.name + "/" + class_dir(c) + "/" + file_name(i);
        write_png(root / rel, img);
        files.push_back({{"path", rel}, {"sha256", sha256_file(root / rel)}});
        ds.ids.push_back(rel);
        ds.domains.push_back(static_cast<int>(di));
        ds.labels.push_back(c);
        append_image(ds, img);
      }
    }
  }
  nlohmann::json manifest;
  manifest["spec"] = factor_spec_to_json(spec);
  manifest["files"] = std::move(files);
  write_file(root / "manifest.json", manifest.dump(2) + "\n");
  return ds;
}

MultiDomainDataset load_image_folders(const fs::path& root, bool labeled) {
  if (!fs::is_directory(root)) throw DataError("dataset root is not a directory: " + root.string());
  auto sorted_entries = [](const fs::path& dir) {
    std::vector<fs::directory_entry> v(fs::directory_iterator(dir), fs::directory_iterator{});
    std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.path().filename() < b.path().filename(); });
    return v;
  };
  auto is_png = [](const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    return ext == ".png";
  };

  MultiDomainDataset ds;
  ds.channels = 3;
  std::vector<fs::path> domain_dirs;
  for (const auto& e : sorted_entries(root))
    if (e.is_directory()) domain_dirs.push_back(e.path());
  if (domain_dirs.empty()) throw DataError("no domain directories under " + root.string());

  std::set<std::string> class_set;
  if (labeled) {
    for (const auto& d : domain_dirs)
      for (const auto& e : sorted_entries(d))
        if (e.is_directory()) class_set.insert(e.path().filename().string());
    ds.class_names.assign(class_set.begin(), class_set.end());
  }

  auto load_file = [&](const fs::path& file, const std::string& rel, int domain, int label) {
    Image8 img = read_png_rgb(file);
    if (img.width != img.height) throw DataError("image is not square: " + rel);
    if (ds.image_size == 0) ds.image_size = img.width;
    if (img.width != ds.image_size) throw DataError("image size differs from the rest of the dataset: " + rel);
    ds.ids.push_back(rel);
    ds.domains.push_back(domain);
    if (label >= 0) ds.labels.push_back(label);
    append_image(ds, img);
  };

  for (std::size_t di = 0; di < domain_dirs.size(); ++di) {
    const std::string dname = domain_dirs[di].filename().string();
    ds.domain_names.push_back(dname);
    const int before = ds.size();
    bool saw_dirs = false, saw_pngs = false;
    for (const auto& e : sorted_entries(domain_dirs[di])) {
      if (e.is_directory()) {
        saw_dirs = true;
        if (!labeled) throw DataError("mixed layout: class directory '" + dname + "/" +
                                      e.path().filename().string() + "' in an unlabeled dataset");
        const std::string cname = e.path().filename().string();
        const int label = static_cast<int>(std::lower_bound(ds.class_names.begin(), ds.class_names.end(), cname) -
                                           ds.class_names.begin());
        for (const auto& f : sorted_entries(e.path())) {
          if (!f.is_regular_file() || !is_png(f.path())) {
            ++ds.skipped_files;
            continue;
          }
          load_file(f.path(), dname + "/" + cname + "/" + f.path().filename().string(), static_cast<int>(di), label);
        }
      } else if (e.is_regular_file()) {
        if (!is_png(e.path())) {
          ++ds.skipped_files;
          continue;
        }
        saw_pngs = true;
        if (labeled) throw DataError("mixed layout: image '" + dname + "/" + e.path().filename().string() +
                                     "' outside a class directory in a labeled dataset");
        load_file(e.path(), dname + "/" + e.path().filename().string(), static_cast<int>(di), -1);
      }
    }
    if (saw_dirs && saw_pngs) throw DataError("mixed layout in domain '" + dname + "'");
    if (ds.size() == before) throw DataError("empty domain directory: " + dname);
  }
  if (ds.skipped_files > 0)
    std::fprintf(stderr, "warning: skipped %d non-image file(s) under %s\n", ds.skipped_files, root.c_str());
  return ds;
}

Split split_train_val(const MultiDomainDataset& data, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("split: val_fraction must lie in (0, 1)");
  std::map<std::pair<int, int>, std::vector<int>> strata;
  for (int i = 0; i < data.size(); ++i)
    strata[{data.domains[static_cast<std::size_t>(i)], data.labeled() ? data.labels[static_cast<std::size_t>(i)] : -1}]
        .push_back(i);
  std::vector<int> tr, va;
  for (auto& [key, items] : strata) {
    const int n = static_cast<int>(items.size());
    if (n < 2) {
      std::string name = data.domain_names[static_cast<std::size_t>(key.first)];
      if (key.second >= 0) name += "/" + data.class_names[static_cast<std::size_t>(key.second)];
      throw DataError("split: stratum '" + name + "' has fewer than 2 items");
    }
    Rng rng = Rng::derive(seed, {static_cast<std::uint64_t>(key.first), static_cast<std::uint64_t>(key.second + 1)});
    std::vector<int> order = items;
    rng.shuffle(order);
    const int nv = std::clamp(static_cast<int>(std::lround(val_fraction * n)), 1, n - 1);
    va.insert(va.end(), order.begin(), order.begin() + nv);
    tr.insert(tr.end(), order.begin() + nv, order.end());
  }
  std::sort(tr.begin(), tr.end());
  std::sort(va.begin(), va.end());
  Split s;
  s.train = data.subset(tr);
  s.val = data.subset(va);
  s.train_indices = std::move(tr);
  s.val_indices = std::move(va);
  return s;
}

std::vector<std::vector<int>> domain_balanced_batches(const MultiDomainDataset& data, int per_domain_batch,
                                                      std::uint64_t seed, int epoch) {
  if (per_domain_batch < 1) throw ConfigError("per_domain_batch must be >= 1");
  std::vector<std::vector<int>> pools;
  int nb = -1;
  for (int d = 0; d < data.num_domains(); ++d) {
    std::vector<int> pool = data.indices_of_domain(d);
    if (static_cast<int>(pool.size()) < per_domain_batch)
      throw DataError("domain '" + data.domain_names[static_cast<std::size_t>(d)] + "' has " +
                      std::to_string(pool.size()) + " items, fewer than per_domain_batch " +
                      std::to_string(per_domain_batch));
    Rng rng = Rng::derive(seed, {0xBA7C4ull, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(d)});
    rng.shuffle(pool);
    const int k = static_cast<int>(pool.size()) / per_domain_batch;
    nb = nb < 0 ? k : std::min(nb, k);
    pools.push_back(std::move(pool));
  }
  std::vector<std::vector<int>> batches(static_cast<std::size_t>(std::max(nb, 0)));
  for (int b = 0; b < nb; ++b)
    for (const auto& pool : pools)
      batches[static_cast<std::size_t>(b)].insert(batches[static_cast<std::size_t>(b)].end(),
                                                  pool.begin() + b * per_domain_batch,
                                                  pool.begin() + (b + 1) * per_domain_batch);
  return batches;
}

}  // namespace dismae
