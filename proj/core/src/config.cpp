#include "mvseg/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <functional>
#include <map>
#include <sstream>

#include "mvseg/error.hpp"

namespace mvseg {

namespace pt = boost::property_tree;

namespace {

using Setter = std::function<void(const std::string&)>;
using Section = std::map<std::string, Setter>;

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

double to_double(const std::string& s) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != s.size()) throw ConfigError("expected a number, got '" + s + "'");
  return v;
}

double to_positive(const std::string& s) {
  const double v = to_double(s);
  if (!(v > 0.0)) throw ConfigError("expected a positive number, got '" + s + "'");
  return v;
}

long long to_int(const std::string& s) {
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != s.size()) throw ConfigError("expected an integer, got '" + s + "'");
  return v;
}

std::uint64_t to_u64(const std::string& s) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    if (!s.empty() && s[0] == '-') throw std::invalid_argument("negative");
    v = std::stoull(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != s.size()) throw ConfigError("expected a non-negative integer, got '" + s + "'");
  return v;
}

bool to_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError("expected a boolean, got '" + s + "'");
}

Interval to_interval(const std::string& s) {
  const auto v = split_list(s);
  if (v.size() != 2) throw ConfigError("expected 'lo, hi', got '" + s + "'");
  return {to_double(v[0]), to_double(v[1])};
}

std::string g(double v) {
  char buf[40];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string interval(const Interval& r) { return g(r.lo) + ", " + g(r.hi); }

std::map<std::string, Section> setters(RunConfig& c) {
  auto& r = c.phantom.ranges;
  auto& v = c.phantom.view;
  auto iv = [](Interval& target) { return [&target](const std::string& s) { target = to_interval(s); }; };
  Section phantom = {
      {"n_subjects", [&](const std::string& s) { c.n_subjects = static_cast<int>(to_int(s)); }},
      {"train_fraction", [&](const std::string& s) { c.phantom.train_fraction = to_double(s); }},
      {"endo_a", iv(r.endo_a)},
      {"endo_b", iv(r.endo_b)},
      {"lv_length", iv(r.lv_length)},
      {"wall_apex", iv(r.wall_apex)},
      {"wall_base", iv(r.wall_base)},
      {"base_truncation", iv(r.base_truncation)},
      {"rotation", iv(r.rotation)},
      {"translation", iv(r.translation)},
      {"myocardium", iv(r.myocardium)},
      {"blood_pool", iv(r.blood_pool)},
      {"background", iv(r.background)},
      {"noise_sigma", iv(r.noise_sigma)},
      {"image_size", [&](const std::string& s) { v.image_size = static_cast<int>(to_int(s)); }},
      {"pixel_spacing", [&](const std::string& s) { v.pixel_spacing = to_double(s); }},
      {"slice_spacing", [&](const std::string& s) { v.slice_spacing = to_double(s); }},
      {"acquisition_size", [&](const std::string& s) { v.acquisition_size = static_cast<int>(to_int(s)); }},
      {"stack_margin", [&](const std::string& s) { v.stack_margin = to_double(s); }},
      {"la_angles_deg",
       [&](const std::string& s) {
         const auto a = split_list(s);
         if (a.size() != 3) throw ConfigError("la_angles_deg needs three values");
         for (int k = 0; k < 3; ++k) v.la_angles_deg[k] = to_double(a[k]);
       }},
      {"basal_gap", iv(v.basal_gap)},
      {"apex_clearance", [&](const std::string& s) { v.apex_clearance = to_double(s); }},
  };
  Section trainer = {
      {"dataset", [&](const std::string& s) { c.dataset = s; }},
      {"out", [&](const std::string& s) { c.out_dir = s; }},
      {"seed", [&](const std::string& s) { c.set_seed(to_u64(s)); }},
      {"fraction", [&](const std::string& s) { c.set_fraction(to_double(s)); }},
      {"epochs",
       [&](const std::string& s) { c.shape_mae.epochs = c.segmenter.epochs = static_cast<int>(to_int(s)); }},
      {"batch",
       [&](const std::string& s) { c.shape_mae.batch = c.segmenter.batch = static_cast<int>(to_int(s)); }},
  };
  auto& sm = c.shape_mae;
  Section shape = {
      {"alpha", [&](const std::string& s) { sm.weights.alpha = to_double(s); }},
      {"beta", [&](const std::string& s) { sm.weights.beta = to_double(s); }},
      {"lr", [&](const std::string& s) { sm.lr = to_positive(s); }},
      {"epochs", [&](const std::string& s) { sm.epochs = static_cast<int>(to_int(s)); }},
      {"batch", [&](const std::string& s) { sm.batch = static_cast<int>(to_int(s)); }},
      {"seed", [&](const std::string& s) { sm.seed = to_u64(s); }},
      {"code_channels", [&](const std::string& s) { sm.model.code_channels = static_cast<int>(to_int(s)); }},
      {"widths",
       [&](const std::string& s) {
         const auto a = split_list(s);
         if (a.size() != 4) throw ConfigError("widths needs four encoder stage widths");
         for (int k = 0; k < 4; ++k) sm.model.widths[k] = static_cast<int>(to_int(a[k]));
       }},
  };
  auto& sg = c.segmenter;
  Section seg = {
      {"fuse_enabled", [&](const std::string& s) { sg.model.fuse_enabled = to_bool(s); }},
      {"base_filters", [&](const std::string& s) { sg.model.base_filters = static_cast<int>(to_int(s)); }},
      {"lr", [&](const std::string& s) { sg.lr = to_positive(s); }},
      {"epochs", [&](const std::string& s) { sg.epochs = static_cast<int>(to_int(s)); }},
      {"batch", [&](const std::string& s) { sg.batch = static_cast<int>(to_int(s)); }},
      {"seed", [&](const std::string& s) { sg.seed = to_u64(s); }},
      {"priors_path", [&](const std::string& s) { sg.priors_dir = s; }},
      {"max_steps", [&](const std::string& s) { sg.max_steps = to_int(s); }},
  };
  return {{"phantom", phantom}, {"trainer", trainer}, {"shape_mae", shape}, {"segmenter", seg}};
}

void apply_section(const std::string& name, const pt::ptree& tree, Section& section) {
  for (const auto& [key, node] : tree) {
    const auto it = section.find(key);
    if (it == section.end()) throw ConfigError("unknown key '" + key + "' in [" + name + "]");
    try {
      it->second(trim(node.data()));
    } catch (const ConfigError& e) {
      throw ConfigError("[" + name + "] " + key + ": " + e.what());
    }
  }
}

}  // namespace

void RunConfig::set_seed(std::uint64_t s) {
  seed = s;
  shape_mae.seed = s;
  segmenter.seed = s;
}

void RunConfig::set_fraction(double f) {
  fraction = f;
  shape_mae.fraction = f;
  segmenter.fraction = f;
}

RunConfig parse_config(const std::string& ini_text) {
  pt::ptree tree;
  std::istringstream in(ini_text);
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  RunConfig c;
  auto table = setters(c);
  for (const auto& [name, node] : tree) {
    if (node.empty() && !node.data().empty()) {
      throw ConfigError("key '" + name + "' is outside any section");
    }
    if (!table.count(name)) throw ConfigError("unknown config section [" + name + "]");
  }
  // [trainer] supplies defaults that the model sections may override.
  for (const char* name : {"phantom", "trainer", "shape_mae", "segmenter"}) {
    if (const auto sub = tree.get_child_optional(name)) apply_section(name, *sub, table.at(name));
  }
  c.shape_mae.dataset = c.segmenter.dataset = c.dataset;
  c.phantom.ranges.validate();
  c.phantom.view.validate();
  return c;
}

RunConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw NotFoundError("config file not found: " + path.string());
  return parse_config(read_text(path));
}

std::string to_ini(const RunConfig& c) {
  std::ostringstream os;
  const auto& r = c.phantom.ranges;
  const auto& v = c.phantom.view;
  os << "[phantom]\n"
     << "n_subjects = " << c.n_subjects << '\n'
     << "train_fraction = " << g(c.phantom.train_fraction) << '\n'
     << "endo_a = " << interval(r.endo_a) << '\n'
     << "endo_b = " << interval(r.endo_b) << '\n'
     << "lv_length = " << interval(r.lv_length) << '\n'
     << "wall_apex = " << interval(r.wall_apex) << '\n'
     << "wall_base = " << interval(r.wall_base) << '\n'
     << "base_truncation = " << interval(r.base_truncation) << '\n'
     << "rotation = " << interval(r.rotation) << '\n'
     << "translation = " << interval(r.translation) << '\n'
     << "myocardium = " << interval(r.myocardium) << '\n'
     << "blood_pool = " << interval(r.blood_pool) << '\n'
     << "background = " << interval(r.background) << '\n'
     << "noise_sigma = " << interval(r.noise_sigma) << '\n'
     << "image_size = " << v.image_size << '\n'
     << "pixel_spacing = " << g(v.pixel_spacing) << '\n'
     << "slice_spacing = " << g(v.slice_spacing) << '\n'
     << "acquisition_size = " << v.acquisition_size << '\n'
     << "stack_margin = " << g(v.stack_margin) << '\n'
     << "la_angles_deg = " << g(v.la_angles_deg[0]) << ", " << g(v.la_angles_deg[1]) << ", "
     << g(v.la_angles_deg[2]) << '\n'
     << "basal_gap = " << interval(v.basal_gap) << '\n'
     << "apex_clearance = " << g(v.apex_clearance) << "\n\n";
  os << "[trainer]\n"
     << "dataset = " << c.dataset.string() << '\n'
     << "out = " << c.out_dir.string() << '\n'
     << "seed = " << c.seed << '\n'
     << "fraction = " << g(c.fraction) << "\n\n";
  const auto& sm = c.shape_mae;
  os << "[shape_mae]\n"
     << "alpha = " << g(sm.weights.alpha) << '\n'
     << "beta = " << g(sm.weights.beta) << '\n'
     << "lr = " << g(sm.lr) << '\n'
     << "epochs = " << sm.epochs << '\n'
     << "batch = " << sm.batch << '\n'
     << "seed = " << sm.seed << '\n'
     << "widths = " << sm.model.widths[0] << ", " << sm.model.widths[1] << ", " << sm.model.widths[2]
     << ", " << sm.model.widths[3] << '\n'
     << "code_channels = " << sm.model.code_channels << "\n\n";
  const auto& sg = c.segmenter;
  os << "[segmenter]\n"
     << "fuse_enabled = " << (sg.model.fuse_enabled ? "true" : "false") << '\n'
     << "base_filters = " << sg.model.base_filters << '\n'
     << "lr = " << g(sg.lr) << '\n'
     << "epochs = " << sg.epochs << '\n'
     << "batch = " << sg.batch << '\n'
     << "seed = " << sg.seed << '\n'
     << "priors_path = " << sg.priors_dir.string() << '\n'
     << "max_steps = " << sg.max_steps << '\n';
  return os.str();
}

}  // namespace mvseg
