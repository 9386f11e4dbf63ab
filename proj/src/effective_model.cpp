#include <modelopt/effective_model.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace modelopt::upscale
{
  EffectiveModel EffectiveModel::uniform(const mesh::Grid &sampling, const Tensor2 &t,
                                         std::string provenance)
  {
    return {sampling, std::vector<Tensor2>(sampling.n_cells(), t), std::move(provenance)};
  }

  bool EffectiveModel::all_symmetric(double rel_tol) const
  {
    for (const auto &t : tensors)
      if (!t.is_symmetric(rel_tol))
        return false;
    return true;
  }

  bool EffectiveModel::all_finite() const
  {
    for (const auto &t : tensors)
      for (double v : t.a)
        if (!std::isfinite(v))
          return false;
    return true;
  }

  double EffectiveModel::norm() const
  {
    double s = 0.0;
    for (const auto &t : tensors)
      s += contract(t, t);
    return std::sqrt(s);
  }

  void write_model_csv(const EffectiveModel &m, const std::filesystem::path &path)
  {
    std::ofstream out(path);
    if (!out)
      throw ConfigError("cannot write " + path.string());
    out << "cell_i,cell_j,a11,a12,a21,a22\n";
    char buf[160];
    for (int K = 0; K < m.size(); ++K)
    {
      const auto [ci, cj] = m.sampling.cell_coords(K);
      const auto &t = m[K];
      std::snprintf(buf, sizeof buf, "%d,%d,%.17g,%.17g,%.17g,%.17g\n", ci, cj, t.a[0], t.a[1],
                    t.a[2], t.a[3]);
      out << buf;
    }
  }

  EffectiveModel read_model_csv(const std::filesystem::path &path, const mesh::Grid &sampling)
  {
    std::ifstream in(path);
    if (!in)
      throw ConfigError("cannot open model " + path.string());
    EffectiveModel m = EffectiveModel::uniform(sampling, Tensor2{}, "file");
    std::vector<char> seen(sampling.n_cells(), 0);
    std::string line;
    std::getline(in, line);
    int lineno = 1;
    while (std::getline(in, line))
    {
      ++lineno;
      if (line.empty())
        continue;
      std::stringstream ss(line);
      std::string tok;
      std::vector<std::string> cols;
      while (std::getline(ss, tok, ','))
        cols.push_back(tok);
      if (cols.size() != 6)
        throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected 6 columns");
      int ci, cj;
      Tensor2 t;
      try
      {
        ci = std::stoi(cols[0]);
        cj = std::stoi(cols[1]);
        for (int k = 0; k < 4; ++k)
          t.a[k] = std::stod(cols[2 + k]);
      }
      catch (const std::logic_error &)
      {
        throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": malformed number");
      }
      if (ci < 0 || cj < 0 || ci >= sampling.nx || cj >= sampling.ny)
        throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                          ": cell index outside the sampling mesh");
      const int K = sampling.cell(ci, cj);
      m[K] = t;
      seen[K] = 1;
    }
    for (char s : seen)
      if (!s)
        throw ConfigError(path.string() + ": model does not cover every sampling cell");
    return m;
  }
} // namespace modelopt::upscale
