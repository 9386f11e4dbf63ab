#include <modelopt/field.hpp>

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace modelopt::field
{
  namespace
  {
    std::string next_token(std::istream &in)
    {
      std::string tok;
      char c;
      while (in.get(c))
      {
        if (c == '#')
        {
          std::string skip;
          std::getline(in, skip);
          continue;
        }
        if (std::isspace(static_cast<unsigned char>(c)))
        {
          if (!tok.empty())
            break;
          continue;
        }
        tok.push_back(c);
      }
      return tok;
    }
  } // namespace

  void write_pgm(const RasterField &r, const std::filesystem::path &path)
  {
    std::ofstream out(path, std::ios::binary);
    if (!out)
      throw ConfigError("cannot write " + path.string());
    out << "P5\n" << r.nx << ' ' << r.ny << "\n255\n";
    std::vector<unsigned char> row(r.nx);
    for (int iy = r.ny - 1; iy >= 0; --iy)
    {
      for (int ix = 0; ix < r.nx; ++ix)
      {
        const double v = r.at(ix, iy);
        if (v < 0.0 || v > 255.0 || v != std::floor(v))
          throw ConfigError("PGM export requires integral values in 0...255");
        row[ix] = static_cast<unsigned char>(v);
      }
      out.write(reinterpret_cast<const char *>(row.data()), r.nx);
    }
  }

  RasterField read_pgm(const std::filesystem::path &path, const Rect &extent)
  {
    std::ifstream in(path, std::ios::binary);
    if (!in)
      throw ConfigError("cannot open raster " + path.string());
    if (next_token(in) != "P5")
      throw ConfigError(path.string() + ": not a binary PGM (P5) file");
    RasterField r;
    try
    {
      r.nx = std::stoi(next_token(in));
      r.ny = std::stoi(next_token(in));
      if (std::stoi(next_token(in)) != 255)
        throw ConfigError(path.string() + ": only maxval 255 is supported");
    }
    catch (const std::logic_error &)
    {
      throw ConfigError(path.string() + ": malformed PGM header");
    }
    if (r.nx < 1 || r.ny < 1)
      throw ConfigError(path.string() + ": empty raster");
    r.eight_bit = true;
    r.extent = extent;
    r.values.resize(static_cast<std::size_t>(r.nx) * r.ny);
    std::vector<unsigned char> row(r.nx);
    for (int iy = r.ny - 1; iy >= 0; --iy)
    {
      if (!in.read(reinterpret_cast<char *>(row.data()), r.nx))
        throw ConfigError(path.string() + ": truncated pixel data");
      for (int ix = 0; ix < r.nx; ++ix)
        r.values[static_cast<std::size_t>(iy) * r.nx + ix] = row[ix];
    }
    return r;
  }

  void write_csv(const RasterField &r, const std::filesystem::path &path)
  {
    std::ofstream out(path);
    if (!out)
      throw ConfigError("cannot write " + path.string());
    char buf[32];
    for (int iy = r.ny - 1; iy >= 0; --iy)
    {
      for (int ix = 0; ix < r.nx; ++ix)
      {
        std::snprintf(buf, sizeof buf, "%.17g", r.at(ix, iy));
        if (ix)
          out << ',';
        out << buf;
      }
      out << '\n';
    }
  }

  RasterField read_csv(const std::filesystem::path &path, const Rect &extent)
  {
    std::ifstream in(path);
    if (!in)
      throw ConfigError("cannot open raster " + path.string());
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line))
    {
      if (line.empty())
        continue;
      std::vector<double> row;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ','))
      {
        char *end = nullptr;
        const double v = std::strtod(cell.c_str(), &end);
        if (end == cell.c_str())
          throw ConfigError(path.string() + ": malformed value '" + cell + "'");
        row.push_back(v);
      }
      if (!rows.empty() && row.size() != rows.front().size())
        throw ConfigError(path.string() + ": ragged raster rows");
      rows.push_back(std::move(row));
    }
    if (rows.empty())
      throw ConfigError(path.string() + ": empty raster");
    RasterField r;
    r.nx = static_cast<int>(rows.front().size());
    r.ny = static_cast<int>(rows.size());
    r.extent = extent;
    r.values.resize(static_cast<std::size_t>(r.nx) * r.ny);
    for (int k = 0; k < r.ny; ++k)
    {
      const int iy = r.ny - 1 - k;
      std::copy(rows[k].begin(), rows[k].end(), r.values.begin() + static_cast<std::ptrdiff_t>(iy) * r.nx);
    }
    return r;
  }
} // namespace modelopt::field
