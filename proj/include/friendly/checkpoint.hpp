#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "friendly/common.hpp"
#include "friendly/models.hpp"
#include "friendly/params.hpp"

namespace friendly {

namespace detail {

template <class Real>
const char* precision_tag() {
  return std::is_same_v<Real, float> ? "f32" : "f64";
}

/// Hexfloat formatting: exact round-trip for every finite value.
inline std::string format_exact(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

template <class Real>
void write_store(std::ostream& out, const ParamStore<Real>& ps) {
  out << "params " << ps.size() << "\n";
  for (const auto& e : ps.entries()) {
    out << e.name << " " << (e.trainable ? 1 : 0) << " " << e.value.rank();
    for (std::size_t d : e.value.shape) out << " " << d;
    out << "\n";
    for (std::size_t i = 0; i < e.value.numel(); ++i) {
      if (i) out << " ";
      out << format_exact(static_cast<double>(e.value[i]));
    }
    out << "\n";
  }
  out << "end\n";
}

template <class Real>
void read_store(std::istream& in, ParamStore<Real>& ps) {
  std::string tok;
  std::size_t count = 0;
  in >> tok >> count;
  if (tok != "params") throw Error("checkpoint: expected params section, got " + tok);
  for (std::size_t p = 0; p < count; ++p) {
    std::string name;
    int trainable = 0;
    std::size_t rank = 0;
    in >> name >> trainable >> rank;
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) in >> d;
    Tensor<Real> t(shape);
    for (std::size_t i = 0; i < t.numel(); ++i) {
      in >> tok;
      t[i] = static_cast<Real>(std::strtod(tok.c_str(), nullptr));
    }
    if (!in) throw Error("checkpoint: truncated values for " + name);
    if (!ps.has(name))
      throw Error("checkpoint: parameter " + name + " not present in target model");
    Tensor<Real>& dst = ps.get(name);
    if (dst.shape != t.shape)
      throw Error("checkpoint: shape mismatch for " + name + ": " + dst.shape_str() +
                  " vs " + t.shape_str());
    dst = std::move(t);
    (void)trainable;
  }
  in >> tok;
  if (tok != "end") throw Error("checkpoint: missing end marker");
}

inline std::string classifier_spec_line(const ClassifierSpec& s) {
  std::ostringstream os;
  os << "model kind=" << classifier_kind_name(s.kind) << " input_dim=" << s.input_dim
     << " channels=" << s.channels << " height=" << s.height << " width=" << s.width
     << " classes=" << s.class_count << " sigma=" << s.sigma << " hidden=";
  for (std::size_t i = 0; i < s.hidden.size(); ++i) os << (i ? "," : "") << s.hidden[i];
  if (s.hidden.empty()) os << "-";
  return os.str();
}

inline std::string aux_spec_line(const AuxNetSpec& s) {
  std::ostringstream os;
  os << "aux kind=" << aux_kind_name(s.kind) << " input_dim=" << s.input_dim
     << " channels=" << s.channels << " height=" << s.height << " width=" << s.width
     << " hidden=" << s.hidden << " n_f=" << s.n_f << " nu=" << s.nu
     << " residual=" << (s.residual ? 1 : 0) << " sigma=" << s.sigma;
  return os.str();
}

inline std::string kv_value(const std::string& line, const std::string& key) {
  const std::string pat = " " + key + "=";
  auto pos = line.find(pat);
  if (pos == std::string::npos) throw Error("checkpoint: missing field " + key);
  pos += pat.size();
  const auto end = line.find(' ', pos);
  return line.substr(pos, end == std::string::npos ? std::string::npos : end - pos);
}

inline ClassifierSpec parse_classifier_spec(const std::string& line) {
  ClassifierSpec s;
  s.kind = classifier_kind_from(kv_value(line, "kind"));
  s.input_dim = std::stoul(kv_value(line, "input_dim"));
  s.channels = std::stoul(kv_value(line, "channels"));
  s.height = std::stoul(kv_value(line, "height"));
  s.width = std::stoul(kv_value(line, "width"));
  s.class_count = std::stoi(kv_value(line, "classes"));
  s.sigma = std::stod(kv_value(line, "sigma"));
  const std::string hid = kv_value(line, "hidden");
  if (hid != "-") {
    std::istringstream hs(hid);
    std::string tok;
    while (std::getline(hs, tok, ',')) s.hidden.push_back(std::stoul(tok));
  }
  return s;
}

inline AuxNetSpec parse_aux_spec(const std::string& line) {
  AuxNetSpec s;
  s.kind = aux_kind_from(kv_value(line, "kind"));
  s.input_dim = std::stoul(kv_value(line, "input_dim"));
  s.channels = std::stoul(kv_value(line, "channels"));
  s.height = std::stoul(kv_value(line, "height"));
  s.width = std::stoul(kv_value(line, "width"));
  s.hidden = std::stoul(kv_value(line, "hidden"));
  s.n_f = std::stoul(kv_value(line, "n_f"));
  s.nu = std::stoi(kv_value(line, "nu"));
  s.residual = kv_value(line, "residual") == "1";
  s.sigma = std::stod(kv_value(line, "sigma"));
  return s;
}

}  // namespace detail

template <class Real>
void save_classifier_checkpoint(const std::string& path, const Classifier<Real>& model,
                                const std::string& config_hash = "-") {
  std::ofstream out(path);
  if (!out) throw Error("checkpoint: cannot write " + path);
  out << "friendly-checkpoint v1\n";
  out << "precision " << detail::precision_tag<Real>() << "\n";
  out << "config_hash " << config_hash << " version " << kVersion << "\n";
  out << detail::classifier_spec_line(model.spec()) << "\n";
  detail::write_store(out, model.params());
}

template <class Real>
void save_aux_checkpoint(const std::string& path, const Auxiliary<Real>& aux,
                         const std::string& config_hash = "-") {
  std::ofstream out(path);
  if (!out) throw Error("checkpoint: cannot write " + path);
  out << "friendly-checkpoint v1\n";
  out << "precision " << detail::precision_tag<Real>() << "\n";
  out << "config_hash " << config_hash << " version " << kVersion << "\n";
  out << detail::aux_spec_line(aux.spec()) << "\n";
  detail::write_store(out, aux.params());
}

namespace detail {

inline void read_checkpoint_header(std::istream& in, const char* expect_precision,
                                   const char* expect_section, std::string& spec_line) {
  std::string line;
  if (!std::getline(in, line) || line != "friendly-checkpoint v1")
    throw Error("checkpoint: bad magic line");
  if (!std::getline(in, line) || line.rfind("precision ", 0) != 0)
    throw Error("checkpoint: missing precision line");
  if (line.substr(10) != expect_precision)
    throw Error("checkpoint: precision mismatch, file has " + line.substr(10) +
                ", expected " + expect_precision);
  if (!std::getline(in, line) || line.rfind("config_hash ", 0) != 0)
    throw Error("checkpoint: missing config_hash line");
  if (!std::getline(in, spec_line) || spec_line.rfind(expect_section, 0) != 0)
    throw Error(std::string("checkpoint: expected a ") + expect_section + " spec line");
}

}  // namespace detail

template <class Real>
Classifier<Real> load_classifier_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("checkpoint: cannot open " + path);
  std::string spec_line;
  detail::read_checkpoint_header(in, detail::precision_tag<Real>(), "model", spec_line);
  Classifier<Real> model(detail::parse_classifier_spec(spec_line), /*seed=*/0);
  detail::read_store(in, model.params());
  return model;
}

template <class Real>
Auxiliary<Real> load_aux_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("checkpoint: cannot open " + path);
  std::string spec_line;
  detail::read_checkpoint_header(in, detail::precision_tag<Real>(), "aux", spec_line);
  Auxiliary<Real> aux(detail::parse_aux_spec(spec_line), /*seed=*/0);
  detail::read_store(in, aux.params());
  return aux;
}

}  // namespace friendly
