#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace testsup {

inline std::string data_file(const std::string& name) {
  return std::string(BSEM_DATA_DIR) + "/" + name;
}

// unique scratch file, removed on destruction
struct TempFile {
  std::string path;
  explicit TempFile(const std::string& stem, const std::string& text = "") {
    static int counter = 0;
    path = "/tmp/bsem_test_" + stem + "_" + std::to_string(counter++) + ".csv";
    if (!text.empty()) {
      std::ofstream out(path);
      out << text;
    }
  }
  ~TempFile() { std::remove(path.c_str()); }
};

inline double mean_of(const std::vector<double>& x) {
  double s = 0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

inline double var_of(const std::vector<double>& x) {
  const double m = mean_of(x);
  double s = 0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

// pooled column of the per-chain draw matrices
inline std::vector<double> pooled_column(const std::vector<Eigen::MatrixXd>& draws, int col) {
  std::vector<double> out;
  for (const auto& ch : draws)
    for (int i = 0; i < ch.rows(); ++i) out.push_back(ch(i, col));
  return out;
}

}  // namespace testsup
