#include "mvseg/datastore.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "mvseg/error.hpp"
#include "mvseg/rng.hpp"

static_assert(std::endian::native == std::endian::little, "little-endian host required");

namespace mvseg {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'M', 'V', 'S', 'G', 'C', 'K', 'P', 'T'};

std::vector<char> read_bytes(const fs::path& path) {
  if (!fs::exists(path)) throw NotFoundError("file not found: " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

json parse_json(const fs::path& path) {
  const std::string text = read_text(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw CorruptionError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

template <typename F>
auto json_field(const fs::path& where, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw CorruptionError("bad or missing field in " + where.string() + ": " + e.what());
  }
}

json vec3_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }
Vec3 vec3_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

json plane_json(const ViewPlane& p) {
  return {{"origin", vec3_json(p.origin)},   {"axis_col", vec3_json(p.axis_col)},
          {"axis_row", vec3_json(p.axis_row)}, {"spacing_row", p.spacing_row},
          {"spacing_col", p.spacing_col},     {"rows", p.rows},
          {"cols", p.cols}};
}

ViewPlane plane_from(const json& j) {
  ViewPlane p;
  p.origin = vec3_from(j.at("origin"));
  p.axis_col = vec3_from(j.at("axis_col"));
  p.axis_row = vec3_from(j.at("axis_row"));
  p.spacing_row = j.at("spacing_row").get<double>();
  p.spacing_col = j.at("spacing_col").get<double>();
  p.rows = j.at("rows").get<int>();
  p.cols = j.at("cols").get<int>();
  return p;
}

json anatomy_json(const AnatomyParams& a) {
  return {{"endo_radii", a.endo_radii},
          {"wall_thickness", a.wall_thickness},
          {"lv_length", a.lv_length},
          {"base_truncation", a.base_truncation},
          {"rotation", a.rotation},
          {"translation", a.translation},
          {"intensity",
           {{"myocardium", a.intensity.myocardium},
            {"blood_pool", a.intensity.blood_pool},
            {"background", a.intensity.background},
            {"noise_sigma", a.intensity.noise_sigma}}}};
}

AnatomyParams anatomy_from(const json& j) {
  AnatomyParams a;
  a.endo_radii = j.at("endo_radii").get<std::array<double, 3>>();
  a.wall_thickness = j.at("wall_thickness").get<std::array<double, 2>>();
  a.lv_length = j.at("lv_length").get<double>();
  a.base_truncation = j.at("base_truncation").get<double>();
  a.rotation = j.at("rotation").get<std::array<double, 3>>();
  a.translation = j.at("translation").get<std::array<double, 3>>();
  const json& im = j.at("intensity");
  a.intensity.myocardium = im.at("myocardium").get<double>();
  a.intensity.blood_pool = im.at("blood_pool").get<double>();
  a.intensity.background = im.at("background").get<double>();
  a.intensity.noise_sigma = im.at("noise_sigma").get<double>();
  return a;
}

template <typename T>
std::span<const char> as_bytes_span(std::span<const T> v) {
  return {reinterpret_cast<const char*>(v.data()), v.size_bytes()};
}

template <typename T>
std::vector<T> read_raw(const fs::path& path, std::size_t expected_count) {
  const std::vector<char> bytes = read_bytes(path);
  if (bytes.size() != expected_count * sizeof(T)) {
    throw CorruptionError("size mismatch in " + path.string() + ": expected " +
                          std::to_string(expected_count * sizeof(T)) + " bytes, found " +
                          std::to_string(bytes.size()));
  }
  std::vector<T> out(expected_count);
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

void concat_grids(const std::vector<Image>& src, std::vector<float>& out) {
  for (const auto& g : src) out.insert(out.end(), g.values().begin(), g.values().end());
}
void concat_grids(const std::vector<Mask>& src, std::vector<std::uint8_t>& out) {
  for (const auto& g : src) out.insert(out.end(), g.values().begin(), g.values().end());
}

template <typename T>
Grid<T> grid_from(const std::vector<T>& flat, std::size_t offset, int rows, int cols) {
  Grid<T> g(rows, cols);
  std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), g.size(), g.data());
  return g;
}

const char* split_name(Split s) { return s == Split::kTrain ? "train" : "test"; }

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "test") return Split::kTest;
  throw CorruptionError("unknown split '" + s + "'");
}

template <typename T>
constexpr const char* dtype_of() {
  return std::is_same_v<T, float> ? "f32le" : "f64le";
}

template <typename T>
NamedArray tensor_array(const std::string& name, const nn::Tensor<T>& t) {
  NamedArray a;
  a.name = name;
  a.dtype = dtype_of<T>();
  a.shape.assign(t.shape().begin(), t.shape().end());
  const auto* p = reinterpret_cast<const char*>(t.data());
  a.bytes.assign(p, p + t.size() * sizeof(T));
  return a;
}

template <typename T>
void copy_into(const NamedArray& a, nn::Tensor<T>& t) {
  const nn::Shape4& s = t.shape();
  if (a.shape.size() != 4 || !std::equal(a.shape.begin(), a.shape.end(), s.begin())) {
    std::string got;
    for (int d : a.shape) got += std::to_string(d) + " ";
    throw ModelMismatch("shape mismatch for '" + a.name + "': model has " + nn::shape_string(s) +
                        ", checkpoint has [ " + got + "]");
  }
  if (a.dtype == "f32le") {
    if (a.bytes.size() != t.size() * 4) throw CorruptionError("byte count mismatch for " + a.name);
    const auto* f = reinterpret_cast<const float*>(a.bytes.data());
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(f[i]);
  } else if (a.dtype == "f64le") {
    if (a.bytes.size() != t.size() * 8) throw CorruptionError("byte count mismatch for " + a.name);
    const auto* d = reinterpret_cast<const double*>(a.bytes.data());
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(d[i]);
  } else {
    throw CorruptionError("unknown dtype '" + a.dtype + "' for " + a.name);
  }
}

}  // namespace

std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

const char* to_string(Split s) { return split_name(s); }

// ------------------------------------------------------------ files

void write_file_atomic(const fs::path& path, std::span<const char> bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      out.close();
      fs::remove(tmp);
      throw InputError("write failed for " + path.string());
    }
  }
  fs::rename(tmp, path);
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  write_file_atomic(path, std::span<const char>(text.data(), text.size()));
}

std::string read_text(const fs::path& path) {
  const auto bytes = read_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

void write_f32le(const fs::path& path, std::span<const float> values) {
  write_file_atomic(path, as_bytes_span(values));
}

std::vector<float> read_f32le(const fs::path& path, std::size_t expected_count) {
  return read_raw<float>(path, expected_count);
}

void write_u8(const fs::path& path, std::span<const std::uint8_t> values) {
  write_file_atomic(path, as_bytes_span(values));
}

std::vector<std::uint8_t> read_u8(const fs::path& path, std::size_t expected_count) {
  return read_raw<std::uint8_t>(path, expected_count);
}

// ------------------------------------------------------------ manifest

std::vector<std::string> DatasetManifest::ids(Split s) const {
  std::vector<std::string> out;
  for (const auto& e : subjects) {
    if (e.split == s) out.push_back(e.id);
  }
  return out;
}

const ManifestEntry& DatasetManifest::entry(const std::string& id) const {
  for (const auto& e : subjects) {
    if (e.id == id) return e;
  }
  throw NotFoundError("subject '" + id + "' is not in the manifest");
}

void DatasetManifest::validate() const {
  std::set<std::string> seen;
  for (const auto& e : subjects) {
    if (!seen.insert(e.id).second) throw CorruptionError("duplicate subject id '" + e.id + "'");
  }
}

void write_manifest(const DatasetManifest& m, const fs::path& dataset_dir) {
  m.validate();
  json subjects = json::array();
  for (const auto& e : m.subjects) {
    subjects.push_back({{"id", e.id}, {"path", e.path}, {"seed", e.seed}, {"split", split_name(e.split)}});
  }
  json j = {{"format_version", m.format_version},
            {"generator_seed", m.generator_seed},
            {"config_hash", m.config_hash},
            {"spacing", m.spacing},
            {"subjects", subjects}};
  write_text_atomic(dataset_dir / "manifest.json", j.dump(2) + "\n");
}

DatasetManifest read_manifest(const fs::path& dataset_dir) {
  const fs::path path = dataset_dir / "manifest.json";
  const json j = parse_json(path);
  DatasetManifest m = json_field(path, [&] {
    DatasetManifest out;
    out.format_version = j.at("format_version").get<int>();
    if (out.format_version != kDatasetFormatVersion) {
      throw VersionError("dataset format version " + std::to_string(out.format_version) +
                         " is not supported (expected " + std::to_string(kDatasetFormatVersion) +
                         ")");
    }
    out.generator_seed = j.at("generator_seed").get<std::uint64_t>();
    out.config_hash = j.at("config_hash").get<std::string>();
    out.spacing = j.at("spacing").get<std::array<double, 3>>();
    for (const auto& s : j.at("subjects")) {
      out.subjects.push_back({s.at("id").get<std::string>(), s.at("path").get<std::string>(),
                              s.at("seed").get<std::uint64_t>(),
                              parse_split(s.at("split").get<std::string>())});
    }
    return out;
  });
  m.root = dataset_dir;
  m.validate();
  for (const auto& e : m.subjects) {
    if (!fs::is_directory(dataset_dir / e.path)) {
      throw NotFoundError("subject directory missing: " + (dataset_dir / e.path).string());
    }
  }
  return m;
}

DatasetManifest subsample_split(const DatasetManifest& manifest, double fraction,
                                std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ConfigError("subsample fraction must lie in (0, 1]");
  }
  std::vector<std::string> train = manifest.ids(Split::kTrain);
  if (train.empty()) throw ConfigError("manifest has no training subjects");
  std::sort(train.begin(), train.end());
  const auto keep_n = static_cast<std::size_t>(
      std::max(1.0, std::ceil(fraction * static_cast<double>(train.size()) - 1e-9)));
  Rng rng(mix_seed(seed, 0x5B));
  rng.shuffle(train);
  const std::set<std::string> keep(train.begin(), train.begin() + static_cast<long>(keep_n));
  DatasetManifest out = manifest;
  out.subjects.clear();
  for (const auto& e : manifest.subjects) {
    if (e.split == Split::kTest || keep.count(e.id)) out.subjects.push_back(e);
  }
  return out;
}

// ------------------------------------------------------------- subjects

void write_subject(const Subject& s, const fs::path& dir) {
  fs::create_directories(dir);
  const int n = static_cast<int>(s.sa_images.size());
  if (n == 0 || s.sa_masks.size() != s.sa_images.size() || s.sa_planes.size() != s.sa_images.size()) {
    throw ShapeError("subject " + s.id + " has an inconsistent SA stack");
  }
  const int h = s.sa_images[0].rows(), w = s.sa_images[0].cols();
  for (int i = 0; i < n; ++i) {
    if (s.sa_images[i].rows() != h || s.sa_images[i].cols() != w || s.sa_masks[i].rows() != h || s.sa_masks[i].cols() != w) {
      throw ShapeError("subject " + s.id + " has SA slices of different sizes");
    }
  }
  std::vector<float> sa_img;
  std::vector<std::uint8_t> sa_msk;
  concat_grids(s.sa_images, sa_img);
  concat_grids(s.sa_masks, sa_msk);
  write_f32le(dir / "sa_img.f32le", sa_img);
  write_u8(dir / "sa_msk.u8", sa_msk);
  json la_planes = json::array();
  for (int k = 0; k < 3; ++k) {
    const std::string base = "la" + std::to_string(k + 1);
    write_f32le(dir / (base + "_img.f32le"), s.la_images[k].values());
    write_u8(dir / (base + "_msk.u8"), s.la_masks[k].values());
    la_planes.push_back(plane_json(s.la_planes[k]));
  }
  std::vector<std::uint8_t> targets;
  for (int j = 0; j < kNumTargetViews; ++j) {
    const Mask& m = s.target_mask(j);
    if (m.rows() != h || m.cols() != w) throw ShapeError("target views must share the SA size");
    targets.insert(targets.end(), m.values().begin(), m.values().end());
  }
  write_u8(dir / "targets.u8", targets);

  json sa_planes = json::array();
  for (const auto& p : s.sa_planes) sa_planes.push_back(plane_json(p));
  json meta = {{"format_version", kDatasetFormatVersion},
               {"id", s.id},
               {"seed", s.seed},
               {"spacing", s.spacing},
               {"rows", h},
               {"cols", w},
               {"n_slices", n},
               {"la_rows", s.la_images[0].rows()},
               {"la_cols", s.la_images[0].cols()},
               {"targets", {{"apical", s.targets.apical}, {"mid", s.targets.mid}, {"basal", s.targets.basal}}},
               {"anatomy", anatomy_json(s.anatomy)},
               {"la_planes", la_planes},
               {"sa_planes", sa_planes}};
  write_text_atomic(dir / "meta.json", meta.dump(2) + "\n");
}

Subject read_subject(const fs::path& dir) {
  const fs::path meta_path = dir / "meta.json";
  const json meta = parse_json(meta_path);
  Subject s;
  int h = 0, w = 0, n = 0, lh = 0, lw = 0;
  json_field(meta_path, [&] {
    const int v = meta.at("format_version").get<int>();
    if (v != kDatasetFormatVersion) {
      throw VersionError("subject format version " + std::to_string(v) + " is not supported");
    }
    s.id = meta.at("id").get<std::string>();
    s.seed = meta.at("seed").get<std::uint64_t>();
    s.spacing = meta.at("spacing").get<std::array<double, 3>>();
    h = meta.at("rows").get<int>();
    w = meta.at("cols").get<int>();
    n = meta.at("n_slices").get<int>();
    lh = meta.at("la_rows").get<int>();
    lw = meta.at("la_cols").get<int>();
    const json& t = meta.at("targets");
    s.targets = {t.at("apical").get<int>(), t.at("mid").get<int>(), t.at("basal").get<int>()};
    s.anatomy = anatomy_from(meta.at("anatomy"));
    for (int k = 0; k < 3; ++k) s.la_planes[k] = plane_from(meta.at("la_planes").at(k));
    for (const auto& p : meta.at("sa_planes")) s.sa_planes.push_back(plane_from(p));
    return 0;
  });
  if (h <= 0 || w <= 0 || n <= 0 || lh <= 0 || lw <= 0 || static_cast<int>(s.sa_planes.size()) != n) {
    throw CorruptionError("inconsistent dimensions in " + meta_path.string());
  }
  for (int idx : {s.targets.apical, s.targets.mid, s.targets.basal}) {
    if (idx < 0 || idx >= n) throw CorruptionError("target slice index out of range in " + meta_path.string());
  }
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const auto sa_img = read_f32le(dir / "sa_img.f32le", plane * n);
  const auto sa_msk = read_u8(dir / "sa_msk.u8", plane * n);
  for (int i = 0; i < n; ++i) {
    s.sa_images.push_back(grid_from(sa_img, plane * i, h, w));
    s.sa_masks.push_back(grid_from(sa_msk, plane * i, h, w));
  }
  const std::size_t la_plane = static_cast<std::size_t>(lh) * lw;
  for (int k = 0; k < 3; ++k) {
    const std::string base = "la" + std::to_string(k + 1);
    s.la_images[k] = grid_from(read_f32le(dir / (base + "_img.f32le"), la_plane), 0, lh, lw);
    s.la_masks[k] = grid_from(read_u8(dir / (base + "_msk.u8"), la_plane), 0, lh, lw);
  }
  const auto targets = read_u8(dir / "targets.u8", plane * kNumTargetViews);
  for (int j = 0; j < kNumTargetViews; ++j) {
    const Mask& m = s.target_mask(j);
    if (m.rows() != h || m.cols() != w ||
        !std::equal(m.values().begin(), m.values().end(), targets.begin() + plane * j)) {
      throw CorruptionError("targets.u8 disagrees with the stored views in " + dir.string());
    }
  }
  return s;
}

// --------------------------------------------------------------- priors

fs::path prior_path(const fs::path& priors_dir, const std::string& id) {
  return priors_dir / (id + ".f32le");
}

void write_priors(const fs::path& path, const PriorCodes& codes) {
  std::vector<float> flat;
  for (const auto& c : codes) {
    if (c.size() != codes[0].size()) throw ShapeError("prior codes differ in length");
    flat.insert(flat.end(), c.begin(), c.end());
  }
  write_f32le(path, flat);
}

PriorCodes read_priors(const fs::path& path, std::size_t code_size) {
  const auto flat = read_f32le(path, code_size * kNumSourceViews);
  PriorCodes out;
  for (int v = 0; v < kNumSourceViews; ++v) {
    out[v].assign(flat.begin() + v * code_size, flat.begin() + (v + 1) * code_size);
  }
  return out;
}

// ---------------------------------------------------------- checkpoints

const char* to_string(ModelKind k) {
  switch (k) {
    case ModelKind::kShapeMae: return "shape_mae";
    case ModelKind::kMvUnet: return "mv_unet";
    case ModelKind::kUnet2d: return "unet2d";
  }
  return "?";
}

ModelKind parse_model_kind(const std::string& s) {
  if (s == "shape_mae") return ModelKind::kShapeMae;
  if (s == "mv_unet") return ModelKind::kMvUnet;
  if (s == "unet2d") return ModelKind::kUnet2d;
  throw ConfigError("unknown model kind '" + s + "' (expected shape_mae, mv_unet or unet2d)");
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  json table = json::array();
  std::uint64_t offset = 0;
  auto add = [&](const NamedArray& a, const char* group) {
    table.push_back({{"name", a.name}, {"dtype", a.dtype}, {"shape", a.shape},
                     {"offset", offset}, {"nbytes", a.bytes.size()}, {"group", group}});
    offset += a.bytes.size();
  };
  for (const auto& a : ckpt.weights) add(a, "weights");
  for (const auto& a : ckpt.optimizer) add(a, "optimizer");
  json config;
  try {
    config = json::parse(ckpt.config_json);
  } catch (const json::exception&) {
    throw InputError("checkpoint config is not valid JSON");
  }
  const json header = {{"model_kind", to_string(ckpt.kind)},
                       {"epoch", ckpt.epoch},
                       {"optimizer_steps", ckpt.optimizer_steps},
                       {"rng_state", ckpt.rng_state},
                       {"config", config},
                       {"arrays", table}};
  const std::string htext = header.dump();
  std::vector<char> out(kMagic, kMagic + 8);
  const std::uint32_t version = static_cast<std::uint32_t>(ckpt.format_version);
  const std::uint64_t hlen = htext.size();
  out.insert(out.end(), reinterpret_cast<const char*>(&version), reinterpret_cast<const char*>(&version) + 4);
  out.insert(out.end(), reinterpret_cast<const char*>(&hlen), reinterpret_cast<const char*>(&hlen) + 8);
  out.insert(out.end(), htext.begin(), htext.end());
  for (const auto& a : ckpt.weights) out.insert(out.end(), a.bytes.begin(), a.bytes.end());
  for (const auto& a : ckpt.optimizer) out.insert(out.end(), a.bytes.begin(), a.bytes.end());
  write_file_atomic(path, out);
}

Checkpoint load_checkpoint(const fs::path& path) {
  const std::vector<char> bytes = read_bytes(path);
  if (bytes.size() < 20 || !std::equal(kMagic, kMagic + 8, bytes.begin())) {
    throw CorruptionError("not a checkpoint file: " + path.string());
  }
  std::uint32_t version = 0;
  std::uint64_t hlen = 0;
  std::memcpy(&version, bytes.data() + 8, 4);
  std::memcpy(&hlen, bytes.data() + 12, 8);
  if (version != kCheckpointFormatVersion) {
    throw VersionError("checkpoint " + path.string() + " has format version " +
                       std::to_string(version) + "; this build reads version " +
                       std::to_string(kCheckpointFormatVersion));
  }
  if (hlen > bytes.size() - 20) throw CorruptionError("truncated checkpoint header in " + path.string());
  json header;
  try {
    header = json::parse(bytes.begin() + 20, bytes.begin() + 20 + static_cast<long>(hlen));
  } catch (const json::exception& e) {
    throw CorruptionError("malformed checkpoint header in " + path.string() + ": " + e.what());
  }
  const std::size_t payload = 20 + hlen;
  Checkpoint ck;
  ck.format_version = static_cast<int>(version);
  json_field(path, [&] {
    ck.kind = parse_model_kind(header.at("model_kind").get<std::string>());
    ck.epoch = header.at("epoch").get<std::int64_t>();
    ck.optimizer_steps = header.at("optimizer_steps").get<std::int64_t>();
    ck.rng_state = header.at("rng_state").get<std::string>();
    ck.config_json = header.at("config").dump();
    for (const auto& e : header.at("arrays")) {
      NamedArray a;
      a.name = e.at("name").get<std::string>();
      a.dtype = e.at("dtype").get<std::string>();
      a.shape = e.at("shape").get<std::vector<int>>();
      const auto off = e.at("offset").get<std::uint64_t>();
      const auto nb = e.at("nbytes").get<std::uint64_t>();
      if (off > bytes.size() - payload || nb > bytes.size() - payload - off) {
        throw CorruptionError("checkpoint payload truncated at array '" + a.name + "' in " +
                              path.string());
      }
      a.bytes.assign(bytes.begin() + static_cast<long>(payload + off),
                     bytes.begin() + static_cast<long>(payload + off + nb));
      const std::string group = e.at("group").get<std::string>();
      (group == "optimizer" ? ck.optimizer : ck.weights).push_back(std::move(a));
    }
    return 0;
  });
  return ck;
}

template <typename T>
std::vector<NamedArray> export_arrays(const nn::ParamList<T>& params) {
  std::vector<NamedArray> out;
  for (const auto& e : params.params) out.push_back(tensor_array(e.name, e.param->value));
  for (const auto& b : params.buffers) out.push_back(tensor_array(b.name, *b.tensor));
  return out;
}

template <typename T>
void import_weights(const Checkpoint& ckpt, nn::ParamList<T>& params) {
  std::map<std::string, const NamedArray*> stored;
  for (const auto& a : ckpt.weights) stored[a.name] = &a;
  std::map<std::string, nn::Tensor<T>*> wanted;
  for (auto& e : params.params) wanted[e.name] = &e.param->value;
  for (auto& b : params.buffers) wanted[b.name] = b.tensor;
  std::vector<std::string> missing, unexpected;
  for (const auto& [name, t] : wanted) {
    if (!stored.count(name)) missing.push_back(name);
  }
  for (const auto& [name, a] : stored) {
    if (!wanted.count(name)) unexpected.push_back(name);
  }
  if (!missing.empty() || !unexpected.empty()) {
    std::ostringstream os;
    os << "checkpoint does not match the model (kind " << to_string(ckpt.kind) << ")";
    if (!missing.empty()) {
      os << "; missing:";
      for (const auto& n : missing) os << ' ' << n;
    }
    if (!unexpected.empty()) {
      os << "; unexpected:";
      for (const auto& n : unexpected) os << ' ' << n;
    }
    throw ModelMismatch(os.str());
  }
  for (auto& [name, t] : wanted) copy_into(*stored.at(name), *t);
}

template <typename T>
std::vector<NamedArray> export_optimizer(nn::Adam<T>& adam) {
  std::vector<NamedArray> out;
  const auto& ps = adam.params().params;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    out.push_back(tensor_array("m/" + ps[i].name, adam.first_moments()[i]));
  }
  for (std::size_t i = 0; i < ps.size(); ++i) {
    out.push_back(tensor_array("v/" + ps[i].name, adam.second_moments()[i]));
  }
  return out;
}

template <typename T>
void import_optimizer(const Checkpoint& ckpt, nn::Adam<T>& adam) {
  std::map<std::string, const NamedArray*> stored;
  for (const auto& a : ckpt.optimizer) stored[a.name] = &a;
  const auto& ps = adam.params().params;
  if (stored.size() != 2 * ps.size()) {
    throw ModelMismatch("optimizer state has " + std::to_string(stored.size()) +
                        " arrays; the model needs " + std::to_string(2 * ps.size()));
  }
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto m = stored.find("m/" + ps[i].name);
    const auto v = stored.find("v/" + ps[i].name);
    if (m == stored.end() || v == stored.end()) {
      throw ModelMismatch("optimizer state missing moments for '" + ps[i].name + "'");
    }
    copy_into(*m->second, adam.first_moments()[i]);
    copy_into(*v->second, adam.second_moments()[i]);
  }
  adam.set_steps(ckpt.optimizer_steps);
}

template std::vector<NamedArray> export_arrays(const nn::ParamList<float>&);
template std::vector<NamedArray> export_arrays(const nn::ParamList<double>&);
template void import_weights(const Checkpoint&, nn::ParamList<float>&);
template void import_weights(const Checkpoint&, nn::ParamList<double>&);
template std::vector<NamedArray> export_optimizer(nn::Adam<float>&);
template std::vector<NamedArray> export_optimizer(nn::Adam<double>&);
template void import_optimizer(const Checkpoint&, nn::Adam<float>&);
template void import_optimizer(const Checkpoint&, nn::Adam<double>&);

}  // namespace mvseg
