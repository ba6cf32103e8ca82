// Copyright (c) 2026, The dismae Authors
// SPDX-License-Identifier: Apache-2.0

#include "dismae/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include <Eigen/Dense>

#include "dismae/error.hpp"
#include "dismae/hash.hpp"

namespace fs = std::filesystem;

namespace dismae {

std::vector<int> resolve_ids(const MultiDomainDataset& data, const std::vector<std::string>& ids) {
  std::map<std::string, int> index;
  for (int i = 0; i < data.size(); ++i) index[data.ids[static_cast<std::size_t>(i)]] = i;
  std::vector<int> out;
  for (const auto& id : ids) {
    auto it = index.find(id);
    if (it == index.end()) throw DataError("unknown item id '" + id + "'");
    out.push_back(it->second);
  }
  return out;
}

namespace {

void blit_patches(Image8& img, const Mat& patches, const ModelConfig& cfg, int cell_x, int cell_y, int scale) {
  PatchGrid g;
  g.batch = 1;
  g.grid_rows = g.grid_cols = cfg.grid_side();
  g.patch_dim = cfg.patch_dim();
  g.tokens = patches;
  const ImageBatch px = unpatchify(g, cfg);
  const int S = cfg.image_size;
  for (int y = 0; y < S * scale; ++y)
    for (int x = 0; x < S * scale; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = px.at(0, y / scale, x / scale, cfg.channels == 3 ? c : 0);
        const std::size_t o =
            (static_cast<std::size_t>(cell_y * S * scale + y) * img.width + cell_x * S * scale + x) * 3 + c;
        img.pixels[o] = to_byte(v);
      }
}

}  // namespace

SwapGrid render_swap_grid(const DisMae& model, const MultiDomainDataset& data, const std::vector<int>& rows,
                          const std::vector<int>& cols, std::uint64_t seed, int scale) {
  const ModelConfig& cfg = model.config();
  if (!cfg.variation_branch) throw ConfigError("swap grid needs the variation branch");
  if (rows.empty() || cols.empty()) throw ConfigError("swap grid needs at least one row and one column");
  if (scale < 1) throw ConfigError("swap grid scale must be >= 1");
  for (int i : rows)
    if (i < 0 || i >= data.size()) throw DataError("swap grid row index out of range");
  for (int j : cols)
    if (j < 0 || j >= data.size()) throw DataError("swap grid column index out of range");

  std::vector<int> items;
  for (int i : rows)
    if (std::find(items.begin(), items.end(), i) == items.end()) items.push_back(i);
  for (int j : cols)
    if (std::find(items.begin(), items.end(), j) == items.end()) items.push_back(j);
  auto slot = [&](int idx) { return static_cast<int>(std::find(items.begin(), items.end(), idx) - items.begin()); };

  const int L = cfg.num_patches();
  const PatchGrid grid = patchify(data.batch(items), cfg);
  MaskPlan plan;
  Mat visible;
  for (std::size_t k = 0; k < items.size(); ++k) {
    PatchGrid one;
    one.batch = 1;
    one.grid_rows = grid.grid_rows;
    one.grid_cols = grid.grid_cols;
    one.patch_dim = grid.patch_dim;
    one.tokens = gather_rows(grid.tokens, [&] {
      std::vector<int> r;
      for (int p = 0; p < L; ++p) r.push_back(static_cast<int>(k) * L + p);
      return r;
    }());
    Rng rng = Rng::derive(seed, {0x5A9, static_cast<std::uint64_t>(items[k])});
    MaskedTokens m = random_masking(one, cfg.mask_ratio, rng);
    if (k == 0) {
      plan = m.plan;
      visible = m.visible;
    } else {
      plan.visible.push_back(m.plan.visible[0]);
      plan.masked.push_back(m.plan.masked[0]);
      plan.restore.push_back(m.plan.restore[0]);
      visible.rows += m.visible.rows;
      visible.data.insert(visible.data.end(), m.visible.data.begin(), m.visible.data.end());
    }
  }

  Tape tape;
  const DisMae::SemanticOutput sem = model.encode_semantic(tape, visible, plan);
  const Var v0 = model.encode_variation(tape, visible, plan);
  std::vector<int> anchors, donors, sem_rows;
  for (int i : rows)
    for (int j : cols) {
      anchors.push_back(slot(i));
      donors.push_back(slot(j));
    }
  for (int a : anchors)
    for (int t = 0; t < sem.seq_len; ++t) sem_rows.push_back(a * sem.seq_len + t);
  const Var cond = gather_rows(v0, donors);
  const Var pred = model.decode(tape, gather_rows(sem.tokens, sem_rows), &cond, plan.select(anchors));

  const int S = cfg.image_size;
  const int R = static_cast<int>(rows.size()), C = static_cast<int>(cols.size());
  SwapGrid out;
  out.image.width = (C + 1) * S * scale;
  out.image.height = (R + 1) * S * scale;
  out.image.channels = 3;
  out.image.pixels.assign(static_cast<std::size_t>(out.image.width) * out.image.height * 3, 255);

  auto original = [&](int idx) {
    std::vector<int> r;
    for (int p = 0; p < L; ++p) r.push_back(slot(idx) * L + p);
    return gather_rows(grid.tokens, r);
  };
  for (int c = 0; c < C; ++c) blit_patches(out.image, original(cols[static_cast<std::size_t>(c)]), cfg, c + 1, 0, scale);
  out.cells.assign(static_cast<std::size_t>(R), {});
  for (int r = 0; r < R; ++r) {
    const int row_item = rows[static_cast<std::size_t>(r)];
    const Mat orig = original(row_item);
    blit_patches(out.image, orig, cfg, 0, r + 1, scale);
    const auto& vis = plan.visible[static_cast<std::size_t>(slot(row_item))];
    for (int c = 0; c < C; ++c) {
      const int cell = r * C + c;
      std::vector<int> pr;
      for (int p = 0; p < L; ++p) pr.push_back(cell * L + p);
      Mat patches = gather_rows(pred.value(), pr);
      out.cells[static_cast<std::size_t>(r)].push_back(patches);
      for (int p : vis) std::copy(orig.row(p).begin(), orig.row(p).end(), patches.row(p).begin());
      blit_patches(out.image, patches, cfg, c + 1, r + 1, scale);
    }
  }
  return out;
}

ScoreSeries read_score_series(const fs::path& run_dir) {
  const fs::path path = run_dir / "logs" / "scalars.csv";
  if (!fs::exists(path)) throw DataError("no scalar log at " + path.string());
  std::istringstream in(read_file(path));
  std::string line;
  std::getline(in, line);
  if (line != "epoch,series,value") throw DataError(path.string() + ": unexpected header '" + line + "'");
  ScoreSeries s;
  std::map<int, std::map<std::string, double>> rows;
  const std::string prefix = "propensity/";
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = line.rfind(',');
    if (c1 == std::string::npos || c1 == c2) throw DataError(path.string() + ": malformed row '" + line + "'");
    const std::string series = line.substr(c1 + 1, c2 - c1 - 1);
    if (series.rfind(prefix, 0) != 0) continue;
    const std::string domain = series.substr(prefix.size());
    if (std::find(s.domains.begin(), s.domains.end(), domain) == s.domains.end()) s.domains.push_back(domain);
    rows[std::stoi(line.substr(0, c1))][domain] = std::stod(line.substr(c2 + 1));
  }
  if (s.domains.empty()) throw DataError(path.string() + ": missing propensity series");
  for (const auto& [e, vals] : rows) {
    std::vector<double> v;
    for (const auto& d : s.domains) {
      auto it = vals.find(d);
      if (it == vals.end())
        throw DataError(path.string() + ": missing propensity series for domain '" + d + "' at epoch " +
                        std::to_string(e));
      v.push_back(it->second);
    }
    s.epochs.push_back(e);
    s.mean_p.push_back(std::move(v));
  }
  return s;
}

std::string score_series_csv(const ScoreSeries& s) {
  std::string out = "epoch,domain,mean_p\n";
  char buf[64];
  for (std::size_t e = 0; e < s.epochs.size(); ++e)
    for (std::size_t d = 0; d < s.domains.size(); ++d) {
      std::snprintf(buf, sizeof buf, "%.12g", s.mean_p[e][d]);
      out += std::to_string(s.epochs[e]) + "," + s.domains[d] + "," + buf + "\n";
    }
  return out;
}

namespace {

struct Canvas {
  Image8 img;
  void put(int x, int y, std::array<std::uint8_t, 3> c) {
    if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
    const std::size_t o = (static_cast<std::size_t>(y) * img.width + x) * 3;
    img.pixels[o] = c[0];
    img.pixels[o + 1] = c[1];
    img.pixels[o + 2] = c[2];
  }
  void line(int x0, int y0, int x1, int y1, std::array<std::uint8_t, 3> c, int dash = 0) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy, step = 0;
    while (true) {
      if (dash == 0 || (step / dash) % 2 == 0) put(x0, y0, c);
      ++step;
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }
};

constexpr std::array<std::array<std::uint8_t, 3>, 6> kLineColors{{
    {{214, 39, 40}}, {{44, 160, 44}}, {{31, 119, 180}}, {{148, 103, 189}}, {{255, 127, 14}}, {{23, 190, 207}}}};

}  // namespace

Image8 plot_score_series(const ScoreSeries& s, int width, int height) {
  if (s.domains.empty()) throw DataError("plot: no series");
  Canvas cv;
  cv.img.width = width;
  cv.img.height = height;
  cv.img.pixels.assign(static_cast<std::size_t>(width) * height * 3, 255);
  const int left = 40, right = width - 15, top = 15, bottom = height - 30;
  cv.line(left, top, left, bottom, {0, 0, 0});
  cv.line(left, bottom, right, bottom, {0, 0, 0});
  for (int t = 0; t <= 4; ++t) {
    const int y = bottom - (bottom - top) * t / 4;
    cv.line(left - 4, y, left, y, {0, 0, 0});
  }
  const int e_min = s.epochs.empty() ? 0 : s.epochs.front();
  const int e_max = s.epochs.empty() ? 1 : s.epochs.back();
  const double span = std::max(1, e_max - e_min);
  auto px = [&](int e) { return left + static_cast<int>(std::lround((e - e_min) / span * (right - left))); };
  auto py = [&](double p) { return bottom - static_cast<int>(std::lround(std::clamp(p, 0.0, 1.0) * (bottom - top))); };

  const double ref = 1.0 / static_cast<double>(s.domains.size());
  cv.line(left, py(ref), right, py(ref), {128, 128, 128}, 6);
  for (std::size_t d = 0; d < s.domains.size(); ++d) {
    const auto color = kLineColors[d % kLineColors.size()];
    for (std::size_t e = 1; e < s.epochs.size(); ++e)
      cv.line(px(s.epochs[e - 1]), py(s.mean_p[e - 1][d]), px(s.epochs[e]), py(s.mean_p[e][d]), color);
    if (s.epochs.size() == 1) cv.put(px(s.epochs[0]), py(s.mean_p[0][d]), color);
  }
  return cv.img;
}

std::string embedding_csv(const MultiDomainDataset& data, const Mat& emb) {
  if (emb.rows != data.size()) throw ContractError("embedding_csv: row count differs from dataset size");
  std::string out = "id,domain,label";
  for (int c = 0; c < emb.cols; ++c) out += ",dim" + std::to_string(c);
  out += "\n";
  char buf[40];
  for (int i = 0; i < data.size(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    out += data.ids[k] + "," + data.domain_names[static_cast<std::size_t>(data.domains[k])] + ",";
    if (data.labeled()) out += std::to_string(data.labels[k]);
    for (int c = 0; c < emb.cols; ++c) {
      std::snprintf(buf, sizeof buf, ",%.17g", emb(i, c));
      out += buf;
    }
    out += "\n";
  }
  return out;
}

PcaResult pca_project(const Mat& x, int dims) {
  const int n = x.rows, H = x.cols;
  if (dims < 1 || dims > H) throw ConfigError("pca_project: dims must be in [1, H]");
  if (n < H)
    throw DataError("pca_project: " + std::to_string(n) + " samples is fewer than the " + std::to_string(H) +
                    " dimensions");
  Eigen::MatrixXd m(n, H);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < H; ++c) m(i, c) = x(i, c);
  const Eigen::RowVectorXd mean = m.colwise().mean();
  m.rowwise() -= mean;
  const Eigen::MatrixXd cov = (m.transpose() * m) / static_cast<double>(std::max(1, n - 1));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw NumericError("pca_project: eigen decomposition failed");
  const double trace = std::max(cov.trace(), 1e-300);

  PcaResult out;
  out.components = Mat(dims, H);
  for (int k = 0; k < dims; ++k) {
    Eigen::VectorXd v = eig.eigenvectors().col(H - 1 - k);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    for (int c = 0; c < H; ++c) out.components(k, c) = v(c);
    out.explained.push_back(eig.eigenvalues()(H - 1 - k) / trace);
  }
  out.coords = Mat(n, dims);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < dims; ++k) {
      double s = 0.0;
      for (int c = 0; c < H; ++c) s += m(i, c) * out.components(k, c);
      out.coords(i, k) = s;
    }
  return out;
}

}  // namespace dismae
