#include "planeloc/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "planeloc/errors.hpp"

namespace planeloc::metrics {

namespace {

std::vector<double> gaussian_kernel(int window, double sigma) {
  std::vector<double> k(static_cast<std::size_t>(window));
  const double c = (window - 1) / 2.0;
  double total = 0;
  for (int i = 0; i < window; ++i) {
    k[static_cast<std::size_t>(i)] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
    total += k[static_cast<std::size_t>(i)];
  }
  for (auto& v : k) v /= total;
  return k;
}

// separable valid-region filter: rows first, then columns
std::vector<double> filter_valid(const std::vector<double>& img, int h, int w,
                                 const std::vector<double>& k) {
  const int n = static_cast<int>(k.size());
  const int wo = w - n + 1;
  const int ho = h - n + 1;
  std::vector<double> rows(static_cast<std::size_t>(h) * static_cast<std::size_t>(wo));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < wo; ++x) {
      double acc = 0;
      for (int i = 0; i < n; ++i) {
        acc += k[static_cast<std::size_t>(i)] *
               img[static_cast<std::size_t>(y) * static_cast<std::size_t>(w) +
                   static_cast<std::size_t>(x + i)];
      }
      rows[static_cast<std::size_t>(y) * static_cast<std::size_t>(wo) +
           static_cast<std::size_t>(x)] = acc;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(ho) * static_cast<std::size_t>(wo));
  for (int y = 0; y < ho; ++y) {
    for (int x = 0; x < wo; ++x) {
      double acc = 0;
      for (int i = 0; i < n; ++i) {
        acc += k[static_cast<std::size_t>(i)] *
               rows[static_cast<std::size_t>(y + i) * static_cast<std::size_t>(wo) +
                    static_cast<std::size_t>(x)];
      }
      out[static_cast<std::size_t>(y) * static_cast<std::size_t>(wo) +
          static_cast<std::size_t>(x)] = acc;
    }
  }
  return out;
}

}  // namespace

double ssim(const geom::Image& a, const geom::Image& b, const SsimConfig& cfg) {
  if (a.h != b.h || a.w != b.w) {
    throw ShapeMismatch("ssim: " + std::to_string(a.h) + "x" + std::to_string(a.w) + " vs " +
                        std::to_string(b.h) + "x" + std::to_string(b.w));
  }
  if (a.h < cfg.window || a.w < cfg.window) {
    throw ImageTooSmall("ssim needs at least " + std::to_string(cfg.window) + "x" +
                        std::to_string(cfg.window) + ", got " + std::to_string(a.h) + "x" +
                        std::to_string(a.w));
  }
  const std::size_t n = a.px.size();
  std::vector<double> xa(n), xb(n), xaa(n), xbb(n), xab(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double va = a.px[i];
    const double vb = b.px[i];
    xa[i] = va;
    xb[i] = vb;
    xaa[i] = va * va;
    xbb[i] = vb * vb;
    xab[i] = va * vb;
  }
  const auto k = gaussian_kernel(cfg.window, cfg.sigma);
  const auto mu_a = filter_valid(xa, a.h, a.w, k);
  const auto mu_b = filter_valid(xb, a.h, a.w, k);
  const auto raw_aa = filter_valid(xaa, a.h, a.w, k);
  const auto raw_bb = filter_valid(xbb, a.h, a.w, k);
  const auto raw_ab = filter_valid(xab, a.h, a.w, k);

  const double c1 = (cfg.k1 * cfg.dynamic_range) * (cfg.k1 * cfg.dynamic_range);
  const double c2 = (cfg.k2 * cfg.dynamic_range) * (cfg.k2 * cfg.dynamic_range);
  double total = 0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double va = raw_aa[i] - mu_a[i] * mu_a[i];
    const double vb = raw_bb[i] - mu_b[i] * mu_b[i];
    const double vab = raw_ab[i] - mu_a[i] * mu_b[i];
    const double num = (2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * vab + c2);
    const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2);
    total += num / den;
  }
  return total / static_cast<double>(mu_a.size());
}

double ang_deg(const geom::PlaneParams& p, const geom::PlaneParams& g) {
  return geom::dihedral_deg(p, g);
}

double dis_mm(const geom::PlaneParams& p, const geom::PlaneParams& g) {
  // exact in integer units; a double-domain subtraction can contract into an
  // fma and leak the scale multiply's rounding residual
  const std::int64_t du = geom::canonicalize(p).d_units() - geom::canonicalize(g).d_units();
  return std::abs(static_cast<double>(du)) * 1e-7;
}

double sad(const std::array<double, 3>& ang, const std::array<double, 3>& dis) {
  double s = 0;
  for (double v : ang) s += v;
  for (double v : dis) s += v;
  return s;
}

namespace {

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary);  // \n endings on every platform
  if (!f) throw IoError("cannot write " + path);
  return f;
}

struct Series {
  std::string label;
  std::string color;
  std::vector<double> y;
};

// minimal fixed-size line chart; every coordinate printed with %.6f
void write_svg(const std::string& path, const std::string& title,
               const std::vector<Series>& series) {
  const double width = 640, height = 360;
  const double left = 56, right = 16, top = 28, bottom = 36;
  double lo = 0, hi = 1;
  std::size_t steps = 2;
  bool first = true;
  for (const auto& s : series) {
    steps = std::max(steps, s.y.size());
    for (double v : s.y) {
      if (first) {
        lo = hi = v;
        first = false;
      } else {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
  }
  if (hi - lo < 1e-12) hi = lo + 1.0;
  const double px = width - left - right;
  const double py = height - top - bottom;
  auto sx = [&](std::size_t i) {
    return left + px * static_cast<double>(i) / static_cast<double>(steps - 1);
  };
  auto sy = [&](double v) { return top + py * (1.0 - (v - lo) / (hi - lo)); };

  auto f = open_out(path);
  f << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << width
    << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n"
    << "<rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height
    << "\" fill=\"white\"/>\n"
    << "<text x=\"" << left << "\" y=\"18\" font-family=\"sans-serif\" font-size=\"13\">" << title
    << "</text>\n"
    << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\""
    << height - bottom << "\" stroke=\"#444\"/>\n"
    << "<line x1=\"" << left << "\" y1=\"" << height - bottom << "\" x2=\"" << width - right
    << "\" y2=\"" << height - bottom << "\" stroke=\"#444\"/>\n"
    << "<text x=\"4\" y=\"" << top + 4 << "\" font-family=\"sans-serif\" font-size=\"11\">"
    << num(hi) << "</text>\n"
    << "<text x=\"4\" y=\"" << height - bottom << "\" font-family=\"sans-serif\" font-size=\"11\">"
    << num(lo) << "</text>\n";
  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    f << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.y.size(); ++i) {
      if (i) f << " ";
      f << num(sx(i)) << "," << num(sy(s.y[i]));
    }
    f << "\"/>\n";
    f << "<text x=\"" << width - right - 120 << "\" y=\"" << top + 14 * (si + 1)
      << "\" font-family=\"sans-serif\" font-size=\"11\" fill=\"" << s.color << "\">" << s.label
      << "</text>\n";
  }
  f << "</svg>\n";
  if (!f) throw IoError("failed writing " + path);
}

struct MeanStd {
  double mean = 0;
  double std = 0;
};

MeanStd aggregate(const std::vector<double>& xs) {
  MeanStd m;
  for (double v : xs) m.mean += v;
  m.mean /= static_cast<double>(xs.size());
  double acc = 0;
  for (double v : xs) acc += (v - m.mean) * (v - m.mean);
  m.std = std::sqrt(acc / static_cast<double>(xs.size()));
  return m;
}

}  // namespace

void write_trace_csv(const std::string& path, const StepTrace& trace) {
  auto f = open_out(path);
  f << "step,ang_S,dis_S,ang_T,dis_T,ang_C,dis_C,sad,q_max_S,q_max_T,q_max_C\n";
  for (std::size_t i = 0; i < trace.ang.size(); ++i) {
    f << i;
    for (int p = 0; p < 3; ++p) f << "," << num(trace.ang[i][p]) << "," << num(trace.dis[i][p]);
    f << "," << num(sad(trace.ang[i], trace.dis[i]));
    for (int p = 0; p < 3; ++p) f << "," << num(trace.q_max[i][p]);
    f << "\n";
  }
  if (!f) throw IoError("failed writing " + path);
}

void emit_report(const std::string& dir, const std::vector<VolumeRow>& rows,
                 const std::vector<StepTrace>& traces) {
  if (rows.empty()) throw InvalidConfig("emit_report: no rows");
  try {
    std::filesystem::create_directories(dir);
  } catch (const std::exception& e) {
    throw IoError("cannot create " + dir + ": " + e.what());
  }

  {
    auto f = open_out(dir + "/volumes.csv");
    f << "volume,ang_S,dis_S,ang_T,dis_T,ang_C,dis_C,ssim_S,ssim_T,ssim_C\n";
    for (const auto& r : rows) {
      f << r.id;
      for (int p = 0; p < 3; ++p) f << "," << num(r.ang[p]) << "," << num(r.dis[p]);
      for (int p = 0; p < 3; ++p) f << "," << num(r.ssim[p]);
      f << "\n";
    }
    if (!f) throw IoError("failed writing " + dir + "/volumes.csv");
  }

  {
    auto f = open_out(dir + "/aggregate.csv");
    f << "plane,ang_mean,ang_std,dis_mean,dis_std,ssim_mean,ssim_std\n";
    static const char* kNames[3] = {"S", "T", "C"};
    for (int p = 0; p < 3; ++p) {
      std::vector<double> av, dv, sv;
      for (const auto& r : rows) {
        av.push_back(r.ang[p]);
        dv.push_back(r.dis[p]);
        sv.push_back(r.ssim[p]);
      }
      const auto am = aggregate(av), dm = aggregate(dv), sm = aggregate(sv);
      f << kNames[p] << "," << num(am.mean) << "," << num(am.std) << "," << num(dm.mean) << ","
        << num(dm.std) << "," << num(sm.mean) << "," << num(sm.std) << "\n";
    }
    // Avg row: each volume gets a plane-averaged score, aggregated over volumes
    std::vector<double> av, dv, sv;
    for (const auto& r : rows) {
      av.push_back((r.ang[0] + r.ang[1] + r.ang[2]) / 3.0);
      dv.push_back((r.dis[0] + r.dis[1] + r.dis[2]) / 3.0);
      sv.push_back((r.ssim[0] + r.ssim[1] + r.ssim[2]) / 3.0);
    }
    const auto am = aggregate(av), dm = aggregate(dv), sm = aggregate(sv);
    f << "Avg," << num(am.mean) << "," << num(am.std) << "," << num(dm.mean) << "," << num(dm.std)
      << "," << num(sm.mean) << "," << num(sm.std) << "\n";
    if (!f) throw IoError("failed writing " + dir + "/aggregate.csv");
  }

  for (std::size_t i = 0; i < traces.size() && i < rows.size(); ++i) {
    const auto& t = traces[i];
    if (t.ang.empty()) continue;
    std::vector<double> sads;
    for (std::size_t s = 0; s < t.ang.size(); ++s) sads.push_back(sad(t.ang[s], t.dis[s]));
    write_svg(dir + "/" + rows[i].id + "_sad.svg", rows[i].id + " SAD per step",
              {{"SAD", "#1f77b4", sads}});
    std::vector<Series> qs;
    static const char* kQNames[3] = {"q_max_S", "q_max_T", "q_max_C"};
    static const char* kColors[3] = {"#1f77b4", "#d62728", "#2ca02c"};
    for (int p = 0; p < 3; ++p) {
      Series s{kQNames[p], kColors[p], {}};
      for (const auto& q : t.q_max) s.y.push_back(q[static_cast<std::size_t>(p)]);
      qs.push_back(std::move(s));
    }
    write_svg(dir + "/" + rows[i].id + "_q.svg", rows[i].id + " max Q per step", qs);
  }
}

}  // namespace planeloc::metrics
