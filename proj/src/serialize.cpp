#include "fedgdve/serialize.hpp"

#include <cstdio>
#include <cstdlib>
#include <istream>
#include <ostream>

namespace fedgdve {

std::string hex_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%a", x);
  return buf;
}

double parse_double(const std::string& token) {
  char* end = nullptr;
  const double v = std::strtod(token.c_str(), &end);
  if (end == token.c_str() || *end != '\0') {
    throw NumericError("malformed number '" + token + "'");
  }
  return v;
}

namespace {

void write_values(std::ostream& os, const double* d, Eigen::Index rows, Eigen::Index cols) {
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      os << hex_double(d[r * cols + c]) << (c + 1 == cols ? '\n' : ' ');
    }
  }
}

void read_values(std::istream& is, const std::string& name, double* d, Eigen::Index count) {
  std::string tok;
  for (Eigen::Index k = 0; k < count; ++k) {
    if (!(is >> tok)) throw NumericError("checkpoint: truncated block '" + name + "'");
    d[k] = parse_double(tok);
  }
}

std::pair<Eigen::Index, Eigen::Index> read_header(std::istream& is, const std::string& name) {
  std::string tag;
  Eigen::Index r = -1;
  Eigen::Index c = -1;
  if (!(is >> tag >> r >> c) || tag != name || r < 0 || c < 0) {
    throw NumericError("checkpoint: expected block '" + name + "', found '" + tag + "'");
  }
  return {r, c};
}

}  // namespace

void write_matrix(std::ostream& os, const std::string& name, const DenseMatrix& m) {
  os << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
  write_values(os, m.data(), m.rows(), m.cols());
}

void write_vector(std::ostream& os, const std::string& name, const DenseVector& v) {
  os << name << ' ' << 1 << ' ' << v.size() << '\n';
  write_values(os, v.data(), 1, v.size());
}

DenseMatrix read_matrix(std::istream& is, const std::string& name) {
  auto [r, c] = read_header(is, name);
  DenseMatrix m(r, c);
  read_values(is, name, m.data(), r * c);
  return m;
}

DenseVector read_vector(std::istream& is, const std::string& name) {
  auto [r, c] = read_header(is, name);
  if (r != 1) throw NumericError("checkpoint: block '" + name + "' is not a vector");
  DenseVector v(c);
  read_values(is, name, v.data(), c);
  return v;
}

}  // namespace fedgdve
