#pragma once

#include <iosfwd>
#include <string>

#include "fedgdve/numerics.hpp"

namespace fedgdve {

/// Named matrix block in exact hexadecimal float text:
///   <name> <rows> <cols>
///   <row values...>
void write_matrix(std::ostream& os, const std::string& name, const DenseMatrix& m);
void write_vector(std::ostream& os, const std::string& name, const DenseVector& v);
DenseMatrix read_matrix(std::istream& is, const std::string& name);
DenseVector read_vector(std::istream& is, const std::string& name);

std::string hex_double(double x);
double parse_double(const std::string& token);

}  // namespace fedgdve
