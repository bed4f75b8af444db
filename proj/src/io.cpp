#include "nimble_mini/io.hpp"

#include <charconv>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

#include "nimble_mini/errors.hpp"

namespace nimble_mini {

std::string formatDouble(double x)
{
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.*g", kTextPrecision, x);
  return buf;
}

std::string joinRow(const Eigen::VectorXd& v)
{
  std::string out;
  for (Eigen::Index i = 0; i < v.size(); ++i)
  {
    if (i > 0)
      out += ',';
    out += formatDouble(v[i]);
  }
  return out;
}

void writeMatrix(
    std::ostream& os, const std::string& label, const Eigen::MatrixXd& m)
{
  os << "# " << label << ' ' << m.rows() << ' ' << m.cols() << '\n';
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    os << joinRow(m.row(r).transpose()) << '\n';
}

std::vector<std::pair<std::string, Eigen::MatrixXd>> readMatrices(
    std::istream& is)
{
  std::vector<std::pair<std::string, Eigen::MatrixXd>> out;
  std::string line;
  int lineNo = 0;
  auto location = [&] { return std::to_string(lineNo) + ":1"; };
  while (std::getline(is, line))
  {
    ++lineNo;
    if (line.empty())
      continue;
    if (line[0] != '#')
      throw ParseError(location(), "expected a block header");
    std::istringstream header(line.substr(1));
    std::string label;
    long rows = -1, cols = -1;
    if (!(header >> label >> rows >> cols) || rows < 0 || cols < 0)
      throw ParseError(location(), "malformed block header");
    Eigen::MatrixXd m(rows, cols);
    for (long r = 0; r < rows; ++r)
    {
      if (!std::getline(is, line))
        throw ParseError(location(), "block '" + label + "' is truncated");
      ++lineNo;
      const char* p = line.data();
      const char* end = line.data() + line.size();
      for (long c = 0; c < cols; ++c)
      {
        double x = 0.0;
        auto [next, ec] = std::from_chars(p, end, x);
        if (ec != std::errc())
          throw ParseError(location(), "bad number in block '" + label + "'");
        m(r, c) = x;
        p = next;
        if (c + 1 < cols)
        {
          if (p == end || *p != ',')
            throw ParseError(location(), "expected ',' in block '" + label + "'");
          ++p;
        }
      }
      if (p != end)
        throw ParseError(location(), "trailing data in block '" + label + "'");
    }
    out.emplace_back(label, std::move(m));
  }
  return out;
}

}  // namespace nimble_mini
