#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "advrm/errors.hpp"
#include "advrm/io.hpp"
#include "advrm/rng.hpp"

namespace advrm {

using Array = std::vector<double>;

inline bool all_finite(const Array& a) {
  for (double x : a)
    if (!std::isfinite(x)) return false;
  return true;
}

// Named flat parameter arrays plus per-array Adam moments. std::map keeps
// iteration order deterministic.
class ParamStore {
 public:
  Array& add(const std::string& name, std::size_t size) {
    if (arrays_.count(name)) throw ConfigError("duplicate parameter array: " + name);
    arrays_[name] = Array(size, 0.0);
    moment1_[name] = Array(size, 0.0);
    moment2_[name] = Array(size, 0.0);
    return arrays_[name];
  }

  Array& operator[](const std::string& name) {
    auto it = arrays_.find(name);
    if (it == arrays_.end()) throw ConfigError("unknown parameter array: " + name);
    return it->second;
  }

  const Array& at(const std::string& name) const {
    auto it = arrays_.find(name);
    if (it == arrays_.end()) throw ConfigError("unknown parameter array: " + name);
    return it->second;
  }

  bool has(const std::string& name) const { return arrays_.count(name) != 0; }

  const std::map<std::string, Array>& arrays() const { return arrays_; }
  std::map<std::string, Array>& mutable_arrays() { return arrays_; }
  Array& moment1(const std::string& name) { return moment1_.at(name); }
  Array& moment2(const std::string& name) { return moment2_.at(name); }

  long step_count() const { return step_; }
  void set_step_count(long s) { step_ = s; }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& [k, v] : arrays_) n += v.size();
    return n;
  }

  bool finite() const {
    for (const auto& [k, v] : arrays_)
      if (!all_finite(v)) return false;
    return true;
  }

  // Versioned text checkpoint. %.17g values round-trip exactly, so
  // save/load/save is byte-identical.
  void save(std::ostream& out) const {
    out << "advrm-params v1\n";
    out << "step " << step_ << "\n";
    out << "arrays " << arrays_.size() << "\n";
    for (const auto& [name, vals] : arrays_) {
      out << name << " " << vals.size() << "\n";
      write_array(out, vals);
      write_array(out, moment1_.at(name));
      write_array(out, moment2_.at(name));
    }
  }

  std::string save_string() const {
    std::ostringstream ss;
    save(ss);
    return ss.str();
  }

  static ParamStore load(std::istream& in) {
    std::string magic, version;
    in >> magic >> version;
    if (magic != "advrm-params" || version != "v1")
      throw StateError("bad checkpoint header: " + magic + " " + version);
    ParamStore p;
    std::string key;
    std::size_t count = 0;
    in >> key >> p.step_;
    in >> key >> count;
    for (std::size_t i = 0; i < count; ++i) {
      std::string name;
      std::size_t n = 0;
      in >> name >> n;
      p.arrays_[name] = read_array(in, n);
      p.moment1_[name] = read_array(in, n);
      p.moment2_[name] = read_array(in, n);
    }
    if (!in) throw StateError("truncated checkpoint");
    return p;
  }

  static ParamStore load_string(const std::string& s) {
    std::istringstream ss(s);
    return load(ss);
  }

  std::uint64_t fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](std::uint64_t v) {
      h ^= v;
      h *= 0x100000001b3ULL;
    };
    for (const auto& [name, vals] : arrays_) {
      mix(fnv1a64(name));
      for (double d : vals) {
        std::uint64_t bits;
        static_assert(sizeof(bits) == sizeof(d));
        std::memcpy(&bits, &d, sizeof(bits));
        mix(bits);
      }
    }
    return h;
  }

 private:
  static void write_array(std::ostream& out, const Array& vals) {
    for (std::size_t i = 0; i < vals.size(); ++i) out << (i ? " " : "") << fmt_double(vals[i]);
    out << "\n";
  }

  static Array read_array(std::istream& in, std::size_t n) {
    Array v(n);
    for (std::size_t i = 0; i < n; ++i) in >> v[i];
    return v;
  }

  std::map<std::string, Array> arrays_;
  std::map<std::string, Array> moment1_, moment2_;
  long step_ = 0;
};

// Loss gradients, shape-congruent with the ParamStore they were built from.
struct Gradients {
  std::map<std::string, Array> g;

  static Gradients zeros_like(const ParamStore& p) {
    Gradients out;
    for (const auto& [name, vals] : p.arrays()) out.g[name] = Array(vals.size(), 0.0);
    return out;
  }

  Array& operator[](const std::string& name) {
    auto it = g.find(name);
    if (it == g.end()) throw ConfigError("unknown gradient array: " + name);
    return it->second;
  }

  const Array& at(const std::string& name) const {
    auto it = g.find(name);
    if (it == g.end()) throw ConfigError("unknown gradient array: " + name);
    return it->second;
  }

  void zero() {
    for (auto& [k, v] : g) std::fill(v.begin(), v.end(), 0.0);
  }

  void add_scaled(const Gradients& other, double s) {
    for (auto& [k, v] : g) {
      const Array& o = other.at(k);
      for (std::size_t i = 0; i < v.size(); ++i) v[i] += s * o[i];
    }
  }

  void scale(double s) {
    for (auto& [k, v] : g)
      for (double& x : v) x *= s;
  }

  bool finite() const {
    for (const auto& [k, v] : g)
      if (!all_finite(v)) return false;
    return true;
  }
};

}  // namespace advrm
