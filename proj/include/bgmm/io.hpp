#pragma once

// File formats: samples CSV, model JSON, balloon CSV, trace CSV, density
// grids as 16-bit PGM or CSV. Reals are written with 17 significant digits,
// which round-trips every double exactly.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "bgmm/balloon.hpp"
#include "bgmm/gauss2.hpp"
#include "bgmm/gem.hpp"
#include "bgmm/grid.hpp"

namespace bgmm {

class ParseError : public Error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : Error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  [[nodiscard]] std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

inline std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {

inline std::ofstream open_out(const std::string& path, bool binary = false) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  return out;
}

inline void finish(std::ofstream& out, const std::string& path) {
  out.flush();
  if (!out) throw Error("failed writing '" + path + "'");
}

inline std::string read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline double parse_real(std::string_view field, const std::string& source, std::size_t line) {
  double v = 0.0;
  const char* end = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (ec != std::errc{} || ptr != end || !std::isfinite(v)) {
    throw ParseError(source, line, "expected a finite number, got '" + std::string(field) + "'");
  }
  return v;
}

inline std::uint64_t parse_count(std::string_view field, const std::string& source, std::size_t line) {
  std::uint64_t v = 0;
  const char* end = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (ec != std::errc{} || ptr != end) {
    throw ParseError(source, line, "expected a non-negative integer, got '" + std::string(field) + "'");
  }
  return v;
}

/// Calls fn(fields, line_number) for every non-empty line after the header,
/// which must equal `header` exactly.
template <typename Fn>
void for_each_csv_row(const std::string& path, std::string_view header, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw ParseError(path, 1, "missing header");
  ++lineno;
  if (trim(line) != header) throw ParseError(path, 1, "expected header '" + std::string(header) + "'");
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    fn(split_csv(line), lineno);
  }
}

}  // namespace detail

// ---- samples ---------------------------------------------------------------

inline void write_samples_csv(const SampleSet& samples, const std::string& path) {
  auto out = detail::open_out(path);
  out << "x,y\n";
  for (const auto& p : samples.points) out << fmt17(p.x) << ',' << fmt17(p.y) << '\n';
  detail::finish(out, path);
}

inline SampleSet read_samples_csv(const std::string& path) {
  SampleSet s;
  detail::for_each_csv_row(path, "x,y", [&](const auto& f, std::size_t line) {
    if (f.size() != 2) throw ParseError(path, line, "expected 2 columns");
    s.points.push_back({detail::parse_real(f[0], path, line), detail::parse_real(f[1], path, line)});
  });
  return s;
}

// ---- model JSON ------------------------------------------------------------

struct ModelFile {
  std::size_t n_samples = 0;
  double target_p = 0.0;
  MixtureModel model;
};

inline std::string model_json(const ModelFile& file) {
  std::string s = "{\n  \"n_samples\": " + std::to_string(file.n_samples) + ",\n  \"target_p\": " +
                  fmt17(file.target_p) + ",\n  \"components\": [";
  const auto& comps = file.model.components;
  for (std::size_t m = 0; m < comps.size(); ++m) {
    const auto& c = comps[m];
    s += (m == 0 ? "\n" : ",\n");
    s += "    {\"pi\": " + fmt17(c.weight) + ", \"mu\": [" + fmt17(c.mean.x) + ", " + fmt17(c.mean.y) +
         "], \"sigma\": [[" + fmt17(c.cov.a) + ", " + fmt17(c.cov.b) + "], [" + fmt17(c.cov.b) + ", " +
         fmt17(c.cov.c) + "]]}";
  }
  s += comps.empty() ? "]\n}\n" : "\n  ]\n}\n";
  return s;
}

inline void write_model_json(const ModelFile& file, const std::string& path) {
  auto out = detail::open_out(path);
  out << model_json(file);
  detail::finish(out, path);
}

inline ModelFile parse_model_json(const std::string& text, const std::string& source = "<model>") {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    // Byte offset -> line number.
    std::size_t line = 1;
    for (std::size_t i = 0; i < std::min<std::size_t>(e.byte, text.size()); ++i) line += text[i] == '\n';
    throw ParseError(source, line, e.what());
  }
  auto real = [&](const nlohmann::json& v, const std::string& what) {
    if (!v.is_number()) throw Error(source + ": " + what + " must be a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw Error(source + ": " + what + " must be finite");
    return d;
  };
  ModelFile file;
  try {
    if (!j.is_object()) throw Error(source + ": top level must be an object");
    if (!j.contains("n_samples") || !j["n_samples"].is_number_integer() || j["n_samples"].get<long long>() < 0) {
      throw Error(source + ": n_samples must be a non-negative integer");
    }
    file.n_samples = j["n_samples"].get<std::size_t>();
    if (!j.contains("target_p")) throw Error(source + ": missing target_p");
    file.target_p = real(j["target_p"], "target_p");
    if (!j.contains("components") || !j["components"].is_array()) throw Error(source + ": components must be an array");
    std::size_t m = 0;
    for (const auto& c : j["components"]) {
      const std::string tag = "component " + std::to_string(m++);
      if (!c.is_object() || !c.contains("pi") || !c.contains("mu") || !c.contains("sigma")) {
        throw Error(source + ": " + tag + " needs pi, mu and sigma");
      }
      const auto& mu = c["mu"];
      const auto& sg = c["sigma"];
      if (!mu.is_array() || mu.size() != 2) throw Error(source + ": " + tag + " mu must be [x, y]");
      if (!sg.is_array() || sg.size() != 2 || !sg[0].is_array() || !sg[1].is_array() || sg[0].size() != 2 ||
          sg[1].size() != 2) {
        throw Error(source + ": " + tag + " sigma must be a 2x2 array");
      }
      GaussComponent comp;
      comp.weight = real(c["pi"], tag + " pi");
      comp.mean = {real(mu[0], tag + " mu"), real(mu[1], tag + " mu")};
      const double b01 = real(sg[0][1], tag + " sigma");
      const double b10 = real(sg[1][0], tag + " sigma");
      if (b01 != b10) throw Error(source + ": " + tag + " sigma is not symmetric");
      comp.cov = {real(sg[0][0], tag + " sigma"), b01, real(sg[1][1], tag + " sigma")};
      file.model.components.push_back(comp);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(source + ": " + e.what());
  }
  validate(file.model);
  return file;
}

inline ModelFile read_model_json(const std::string& path) { return parse_model_json(detail::read_all(path), path); }

// ---- balloons --------------------------------------------------------------

inline constexpr std::string_view kBalloonHeader = "index,x,y,sigma2,R_aa,R_ab,R_bb,achieved_p,saturated,inner_iters";

inline void write_balloon_csv(const SampleSet& samples, const BalloonField& field, const std::string& path) {
  if (samples.size() != field.size()) throw Error("balloon field and samples differ in length");
  auto out = detail::open_out(path);
  out << kBalloonHeader << '\n';
  for (std::size_t n = 0; n < field.size(); ++n) {
    const auto& e = field.entries[n];
    out << n << ',' << fmt17(samples.points[n].x) << ',' << fmt17(samples.points[n].y) << ',' << fmt17(e.sigma2)
        << ',' << fmt17(e.kernel.a) << ',' << fmt17(e.kernel.b) << ',' << fmt17(e.kernel.c) << ','
        << fmt17(e.achieved_p) << ',' << (e.saturated ? 1 : 0) << ',' << e.inner_iters << '\n';
  }
  detail::finish(out, path);
}

struct BalloonFile {
  SampleSet samples;
  BalloonField field;
};

/// Rows must be ordered by index starting at 0. target_p is not stored.
inline BalloonFile read_balloon_csv(const std::string& path) {
  BalloonFile file;
  detail::for_each_csv_row(path, kBalloonHeader, [&](const auto& f, std::size_t line) {
    if (f.size() != 10) throw ParseError(path, line, "expected 10 columns");
    if (detail::parse_count(f[0], path, line) != file.samples.size()) {
      throw ParseError(path, line, "index out of sequence");
    }
    file.samples.points.push_back({detail::parse_real(f[1], path, line), detail::parse_real(f[2], path, line)});
    BalloonEntry e;
    e.sigma2 = detail::parse_real(f[3], path, line);
    e.kernel = {detail::parse_real(f[4], path, line), detail::parse_real(f[5], path, line),
                detail::parse_real(f[6], path, line)};
    e.achieved_p = detail::parse_real(f[7], path, line);
    const auto sat = detail::parse_count(f[8], path, line);
    if (sat > 1) throw ParseError(path, line, "saturated must be 0 or 1");
    e.saturated = sat == 1;
    e.inner_iters = detail::parse_count(f[9], path, line);
    if (!e.kernel.positive_definite()) throw ParseError(path, line, "kernel is not positive-definite");
    file.field.entries.push_back(e);
  });
  return file;
}

// ---- trace -----------------------------------------------------------------

inline void write_trace_csv(const FitTrace& trace, const std::string& path) {
  auto out = detail::open_out(path);
  out << "iteration,log_likelihood,effective_count,max_delta,psd_projections,components,saturated_balloons\n";
  for (const auto& r : trace) {
    out << r.iteration << ',' << fmt17(r.log_likelihood) << ',' << r.effective_count << ',' << fmt17(r.max_delta)
        << ',' << r.psd_projections << ',' << r.components << ',' << r.saturated_balloons << '\n';
  }
  detail::finish(out, path);
}

// ---- density grids ---------------------------------------------------------

/// Metadata carried in the PGM comment line.
struct PgmInfo {
  GridSpec spec;
  double scale = 0.0;  // grid maximum mapped to 65535
  double gamma = 1.0;
  std::size_t maxval = 65535;
};

/// Binary PGM (P5, 16-bit big-endian), top row = largest y. Each value v
/// maps to round(65535 · (v / max)^gamma).
inline void write_pgm(const DensityGrid& grid, double gamma, const std::string& path) {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw Error("gamma must be positive");
  const auto& s = grid.spec;
  const double scale = grid.max_value();
  auto out = detail::open_out(path, true);
  out << "P5\n# bgmm bbox " << fmt17(s.min.x) << ' ' << fmt17(s.min.y) << ' ' << fmt17(s.max.x) << ' '
      << fmt17(s.max.y) << " scale " << fmt17(scale) << " gamma " << fmt17(gamma) << '\n'
      << s.width << ' ' << s.height << "\n65535\n";
  std::vector<unsigned char> row(2 * s.width);
  for (std::size_t jj = 0; jj < s.height; ++jj) {
    const std::size_t j = s.height - 1 - jj;
    for (std::size_t i = 0; i < s.width; ++i) {
      const double v = grid.at(i, j);
      if (!std::isfinite(v) || v < 0.0) throw Error("grid holds a non-finite or negative value");
      const double t = scale > 0.0 ? std::pow(v / scale, gamma) : 0.0;
      const auto q = static_cast<std::uint16_t>(std::lround(std::clamp(t, 0.0, 1.0) * 65535.0));
      row[2 * i] = static_cast<unsigned char>(q >> 8);
      row[2 * i + 1] = static_cast<unsigned char>(q & 0xff);
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  detail::finish(out, path);
}

struct PgmImage {
  PgmInfo info;
  std::vector<std::uint16_t> pixels;  // file order: top row first
};

inline PgmImage read_pgm(const std::string& path) {
  const std::string data = detail::read_all(path);
  std::size_t pos = 0;
  std::size_t line = 1;
  auto next_line = [&]() -> std::string {
    const std::size_t nl = data.find('\n', pos);
    if (nl == std::string::npos) throw ParseError(path, line, "truncated header");
    std::string l = data.substr(pos, nl - pos);
    pos = nl + 1;
    ++line;
    return l;
  };
  if (next_line() != "P5") throw ParseError(path, 1, "not a binary PGM (P5)");
  PgmImage img;
  const std::string meta = next_line();
  std::istringstream ms(meta);
  std::string hash, tag, bbox, scale_kw, gamma_kw;
  std::string v[6];
  ms >> hash >> tag >> bbox >> v[0] >> v[1] >> v[2] >> v[3] >> scale_kw >> v[4] >> gamma_kw >> v[5];
  if (hash != "#" || tag != "bgmm" || bbox != "bbox" || scale_kw != "scale" || gamma_kw != "gamma") {
    throw ParseError(path, 2, "missing bgmm metadata comment");
  }
  auto& info = img.info;
  info.spec.min = {detail::parse_real(v[0], path, 2), detail::parse_real(v[1], path, 2)};
  info.spec.max = {detail::parse_real(v[2], path, 2), detail::parse_real(v[3], path, 2)};
  info.scale = detail::parse_real(v[4], path, 2);
  info.gamma = detail::parse_real(v[5], path, 2);
  std::istringstream ds(next_line());
  if (!(ds >> info.spec.width >> info.spec.height)) throw ParseError(path, 3, "bad dimensions");
  std::istringstream mv(next_line());
  if (!(mv >> info.maxval) || info.maxval != 65535) throw ParseError(path, 4, "maxval must be 65535");
  const std::size_t count = info.spec.width * info.spec.height;
  if (data.size() - pos != 2 * count) throw ParseError(path, 5, "pixel data length mismatch");
  img.pixels.resize(count);
  for (std::size_t k = 0; k < count; ++k) {
    const auto hi = static_cast<unsigned char>(data[pos + 2 * k]);
    const auto lo = static_cast<unsigned char>(data[pos + 2 * k + 1]);
    img.pixels[k] = static_cast<std::uint16_t>((hi << 8) | lo);
  }
  return img;
}

/// One row per cell: i,j,x,y,density with (x, y) the cell center.
inline void write_grid_csv(const DensityGrid& grid, const std::string& path) {
  auto out = detail::open_out(path);
  out << "i,j,x,y,density\n";
  for (std::size_t j = 0; j < grid.spec.height; ++j) {
    for (std::size_t i = 0; i < grid.spec.width; ++i) {
      const Vec2 c = grid.spec.cell_center(i, j);
      out << i << ',' << j << ',' << fmt17(c.x) << ',' << fmt17(c.y) << ',' << fmt17(grid.at(i, j)) << '\n';
    }
  }
  detail::finish(out, path);
}

}  // namespace bgmm
