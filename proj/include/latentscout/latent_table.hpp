#pragma once

#include <charconv>
#include <cstddef>
#include <filesystem>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "latentscout/error.hpp"
#include "latentscout/fsutil.hpp"

namespace latentscout {

/// Per-sample posterior means and standard deviations, row-aligned with the
/// dataset they were encoded from. Dimensions are addressed 1-based at the
/// public API (dim j in 1..d) and stored row-major.
struct LatentTable {
  int d = 0;
  std::vector<double> mu;     // N x d
  std::vector<double> sigma;  // N x d
  std::vector<int> labels;
  std::vector<std::string> ids;

  std::size_t size() const { return labels.size(); }
  double mu_at(std::size_t row, int dim) const { return mu[row * d + (dim - 1)]; }
  double sigma_at(std::size_t row, int dim) const { return sigma[row * d + (dim - 1)]; }

  /// Column of posterior means for dimension `dim` (1-based).
  std::vector<double> column(int dim) const {
    check_dim(dim);
    std::vector<double> out(size());
    for (std::size_t i = 0; i < size(); ++i) out[i] = mu_at(i, dim);
    return out;
  }

  std::vector<double> row_mu(std::size_t row) const {
    return {mu.begin() + static_cast<std::ptrdiff_t>(row * d), mu.begin() + static_cast<std::ptrdiff_t>((row + 1) * d)};
  }

  std::ptrdiff_t find(const std::string& id) const {
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (ids[i] == id) return static_cast<std::ptrdiff_t>(i);
    return -1;
  }

  void check_dim(int dim) const {
    if (dim < 1 || dim > d)
      throw ContractError("latent dimension " + std::to_string(dim) + " outside 1.." + std::to_string(d));
  }

  LatentTable rows(const std::vector<std::size_t>& idx) const {
    LatentTable out;
    out.d = d;
    for (auto i : idx) {
      if (i >= size()) throw ContractError("latent row index out of range");
      out.mu.insert(out.mu.end(), mu.begin() + static_cast<std::ptrdiff_t>(i * d),
                    mu.begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
      out.sigma.insert(out.sigma.end(), sigma.begin() + static_cast<std::ptrdiff_t>(i * d),
                       sigma.begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
      out.labels.push_back(labels[i]);
      out.ids.push_back(ids[i]);
    }
    return out;
  }

  void append(const LatentTable& other) {
    if (size() == 0 && d == 0) d = other.d;
    if (other.d != d) throw ContractError("latent tables differ in dimensionality");
    mu.insert(mu.end(), other.mu.begin(), other.mu.end());
    sigma.insert(sigma.end(), other.sigma.begin(), other.sigma.end());
    labels.insert(labels.end(), other.labels.begin(), other.labels.end());
    ids.insert(ids.end(), other.ids.begin(), other.ids.end());
  }

  friend bool operator==(const LatentTable&, const LatentTable&) = default;
};

/// Shortest decimal that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ParseError("not a number: '" + std::string(s) + "'", 0);
  return v;
}

/// CSV: header `id,label,mu_1..mu_d,sigma_1..sigma_d`. Ids must not contain
/// commas or newlines.
inline std::string latent_table_to_csv(const LatentTable& t) {
  std::string out = "id,label";
  for (int j = 1; j <= t.d; ++j) out += ",mu_" + std::to_string(j);
  for (int j = 1; j <= t.d; ++j) out += ",sigma_" + std::to_string(j);
  out += '\n';
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t.ids[i].find_first_of(",\n\r") != std::string::npos)
      throw ContractError("sample id contains a CSV delimiter: " + t.ids[i]);
    out += t.ids[i];
    out += ',';
    out += std::to_string(t.labels[i]);
    for (int j = 1; j <= t.d; ++j) (out += ',') += format_double(t.mu_at(i, j));
    for (int j = 1; j <= t.d; ++j) (out += ',') += format_double(t.sigma_at(i, j));
    out += '\n';
  }
  return out;
}

inline LatentTable latent_table_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t offset = 0;
  if (!std::getline(in, line)) throw ParseError("latent CSV is empty", 0);
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::string cur;
    for (char ch : s) {
      if (ch == ',') {
        cells.push_back(cur);
        cur.clear();
      } else if (ch != '\r') {
        cur += ch;
      }
    }
    cells.push_back(cur);
    return cells;
  };
  const auto header = split(line);
  if (header.size() < 4 || header[0] != "id" || header[1] != "label" || (header.size() - 2) % 2 != 0)
    throw ParseError("latent CSV header must be id,label,mu_*,sigma_*", 0);
  LatentTable t;
  t.d = static_cast<int>((header.size() - 2) / 2);
  for (int j = 1; j <= t.d; ++j) {
    if (header[1 + j] != "mu_" + std::to_string(j) || header[1 + t.d + j] != "sigma_" + std::to_string(j))
      throw ParseError("latent CSV header columns out of order", 0);
  }
  offset += line.size() + 1;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") {
      offset += line.size() + 1;
      continue;
    }
    const auto cells = split(line);
    if (cells.size() != header.size()) throw ParseError("latent CSV row has wrong number of cells", offset);
    t.ids.push_back(cells[0]);
    t.labels.push_back(static_cast<int>(parse_double(cells[1])));
    for (int j = 0; j < t.d; ++j) t.mu.push_back(parse_double(cells[2 + j]));
    for (int j = 0; j < t.d; ++j) t.sigma.push_back(parse_double(cells[2 + t.d + j]));
    offset += line.size() + 1;
  }
  return t;
}

inline void save_latent_table(const fs::path& path, const LatentTable& t) { write_atomic(path, latent_table_to_csv(t)); }
inline LatentTable load_latent_table(const fs::path& path) { return latent_table_from_csv(read_file(path)); }

}  // namespace latentscout
