#include "das/proxy.hpp"

#include "das/errors.hpp"

#include <bit>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace das {

ActivationCode ActivationCode::from_bits(std::span<const std::uint8_t> bits) {
  ActivationCode c;
  c.n_a = bits.size();
  c.words.assign((bits.size() + 63) / 64, 0);
  for (std::size_t k = 0; k < bits.size(); ++k)
    if (bits[k]) c.words[k / 64] |= std::uint64_t{1} << (k % 64);
  return c;
}

ActivationCode ActivationCode::from_string(std::string_view s) {
  std::vector<std::uint8_t> bits;
  bits.reserve(s.size());
  for (char ch : s) {
    if (ch != '0' && ch != '1') throw FormatError("activation code must be a 0/1 string");
    bits.push_back(ch == '1');
  }
  return from_bits(bits);
}

std::size_t hamming_distance(const ActivationCode& a, const ActivationCode& b) {
  if (a.n_a != b.n_a) throw InternalError("activation codes differ in length");
  std::size_t d = 0;
  for (std::size_t w = 0; w < a.words.size(); ++w) d += static_cast<std::size_t>(std::popcount(a.words[w] ^ b.words[w]));
  return d;
}

std::vector<ActivationCode> codes_from_masks(std::span<const ReluMask> masks) {
  if (masks.empty()) throw ScoringUnsupported("network has no ReLU layers; activation codes are undefined");
  const std::size_t n = masks.front().shape.at(0);
  std::size_t n_a = 0;
  for (const ReluMask& m : masks) {
    if (m.shape.at(0) != n) throw InternalError("mask batch extents disagree");
    n_a += m.active.size() / n;
  }
  std::vector<ActivationCode> codes(n);
  for (std::size_t i = 0; i < n; ++i) {
    ActivationCode& c = codes[i];
    c.n_a = n_a;
    c.words.assign((n_a + 63) / 64, 0);
    std::size_t k = 0;
    for (const ReluMask& m : masks) {
      const std::size_t per = m.active.size() / n;
      const std::uint8_t* src = m.active.data() + i * per;
      for (std::size_t e = 0; e < per; ++e, ++k)
        if (src[e]) c.words[k / 64] |= std::uint64_t{1} << (k % 64);
    }
  }
  return codes;
}

std::vector<ActivationCode> extract_codes(Network& net, const Tensor& batch) {
  if (batch.rank() == 0 || batch.extent(0) < 2) throw ConfigError("scoring needs a batch of at least 2 inputs");
  (void)forward(net, batch);
  return codes_from_masks(net.relu_masks());
}

KernelMatrix hamming_kernel(std::span<const ActivationCode> codes) {
  if (codes.size() < 2) throw ConfigError("kernel needs at least 2 codes");
  const std::size_t n_a = codes[0].n_a;
  for (const ActivationCode& c : codes)
    if (c.n_a != n_a) throw InternalError("activation codes disagree on N_A");
  const auto n = static_cast<Eigen::Index>(codes.size());
  KernelMatrix k{Eigen::MatrixXd(n, n), KernelKind::Raw, n_a};
  for (Eigen::Index i = 0; i < n; ++i) {
    k.entries(i, i) = static_cast<double>(n_a);
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = static_cast<double>(n_a - hamming_distance(codes[i], codes[j]));
      k.entries(i, j) = v;
      k.entries(j, i) = v;
    }
  }
  return k;
}

KernelMatrix normalize_kernel(const KernelMatrix& raw, std::size_t n_a) {
  if (raw.kind != KernelKind::Raw) throw ConfigError("normalize_kernel expects a raw kernel");
  if (n_a == 0) throw ConfigError("N_A must be positive");
  return {raw.entries / static_cast<double>(n_a), KernelKind::Normalized, n_a};
}

double log_det(const KernelMatrix& k) { return log_det(k.entries); }

std::string_view method_name(Method m) noexcept { return m == Method::WOT ? "wot" : "das"; }

Method parse_method(std::string_view s) {
  if (s == "wot" || s == "WOT") return Method::WOT;
  if (s == "das" || s == "DAS") return Method::DAS;
  throw ConfigError("unknown method '" + std::string(s) + "' (expected das or wot)");
}

Lambda Lambda::fixed(double v) {
  if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("lambda must be a finite value >= 0");
  return Lambda(false, v);
}

Lambda Lambda::parse(std::string_view s) {
  if (s == "auto") return automatic();
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw ConfigError("lambda must be 'auto' or a number, got '" + std::string(s) + "'");
  return fixed(v);
}

double Lambda::resolve(std::size_t batch_size) const noexcept {
  return auto_ ? 2.0 / 3.0 * static_cast<double>(batch_size) : value_;
}

std::string Lambda::str() const {
  if (auto_) return "auto";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", value_);
  return buf;
}

ScoreComponents score_components(std::span<const ActivationCode> codes) {
  const KernelMatrix raw = hamming_kernel(codes);
  const KernelMatrix nk = normalize_kernel(raw, raw.n_a);
  return {log_det(raw), log_det(nk), codes.size(), raw.n_a};
}

Score combine(const ScoreComponents& c, Method method, Lambda lambda) {
  Score s;
  s.logdet_nk = c.logdet_nk;
  s.log_na = c.log_na();
  if (method == Method::WOT) {
    s.lambda = static_cast<double>(c.n);
    s.value = c.logdet_raw;
  } else {
    s.lambda = lambda.resolve(c.n);
    s.value = std::isfinite(c.logdet_nk) ? c.logdet_nk + s.lambda * s.log_na : kNegInfinity;
  }
  return s;
}

Score wot_score(Network& net, const Tensor& batch) {
  return combine(score_components(extract_codes(net, batch)), Method::WOT);
}

Score das_score(Network& net, const Tensor& batch, Lambda lambda) {
  return combine(score_components(extract_codes(net, batch)), Method::DAS, lambda);
}

void kernel_dump(const KernelMatrix& k, const std::filesystem::path& stem) {
  const auto n = k.entries.rows();
  auto csv_path = stem;
  csv_path += ".csv";
  auto pgm_path = stem;
  pgm_path += ".pgm";
  {
    std::ofstream csv(csv_path);
    if (!csv) throw IoError("cannot write " + csv_path.string());
    char buf[32];
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        std::snprintf(buf, sizeof buf, "%.17g", k.entries(i, j));
        csv << (j ? "," : "") << buf;
      }
      csv << '\n';
    }
    if (!csv) throw IoError("write failed for " + csv_path.string());
  }
  std::ofstream pgm(pgm_path, std::ios::binary);
  if (!pgm) throw IoError("cannot write " + pgm_path.string());
  pgm << "P5\n" << n << ' ' << n << "\n255\n";
  const double scale = k.kind == KernelKind::Raw ? 1.0 / static_cast<double>(std::max<std::size_t>(k.n_a, 1)) : 1.0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      const double v = std::clamp(k.entries(i, j) * scale, 0.0, 1.0);
      pgm.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
  if (!pgm) throw IoError("write failed for " + pgm_path.string());
}

Eigen::MatrixXd read_kernel_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(std::move(row));
  }
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != static_cast<std::size_t>(m.cols())) throw FormatError(path.string() + ": ragged kernel CSV");
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  return m;
}

}  // namespace das
