#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace nimble_mini {

/// Digits written for every floating-point value; enough for a lossless
/// round trip of a double.
constexpr int kTextPrecision = 17;

std::string formatDouble(double x);

/// Writes one labeled block:
///   # <label> <rows> <cols>
///   comma-separated row values, one line per row
void writeMatrix(
    std::ostream& os, const std::string& label, const Eigen::MatrixXd& m);

/// Parses every block written by writeMatrix(). Throws ParseError.
std::vector<std::pair<std::string, Eigen::MatrixXd>> readMatrices(
    std::istream& is);

/// Comma-separated line of values.
std::string joinRow(const Eigen::VectorXd& v);

}  // namespace nimble_mini
