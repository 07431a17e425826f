#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "sgol/data.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace sgol {

namespace {

std::uint8_t quantize(double v) {
  double c = std::min(1.0, std::max(0.0, v));
  return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

void write_pnm(const std::string& path, const char* magic, const Image& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open for writing: " + path);
  f << magic << "\n" << img.width << " " << img.height << "\n255\n";
  std::vector<std::uint8_t> row(img.width * img.channels);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      for (std::size_t c = 0; c < img.channels; ++c) {
        row[x * img.channels + c] = quantize(img.at(c, y, x));
      }
    }
    f.write(reinterpret_cast<const char*>(row.data()),
            static_cast<std::streamsize>(row.size()));
  }
  if (!f) throw DataError("write failed: " + path);
}

bool pnm_space(int ch) {
  return ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r';
}

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string pnm_token(std::istream& in, const std::string& path) {
  std::string tok;
  int ch = in.get();
  while (ch != EOF) {
    if (ch == '#') {
      while (ch != EOF && ch != '\n') ch = in.get();
    } else if (pnm_space(ch)) {
      if (!tok.empty()) break;
    } else {
      tok.push_back(static_cast<char>(ch));
    }
    if (!tok.empty() && pnm_space(in.peek())) break;
    ch = in.get();
  }
  if (tok.empty()) throw DataError("truncated header in " + path);
  return tok;
}

Image read_pnm(const std::string& path, const char* magic,
               std::size_t channels) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open: " + path);
  if (pnm_token(f, path) != magic) {
    throw DataError("bad magic in " + path + " (expected " + magic + ")");
  }
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(pnm_token(f, path));
    h = std::stoul(pnm_token(f, path));
    maxval = std::stoul(pnm_token(f, path));
  } catch (const std::exception&) {
    throw DataError("bad header in " + path);
  }
  if (w == 0 || h == 0 || maxval != 255) {
    throw DataError("unsupported dimensions/maxval in " + path);
  }
  f.get();  // single whitespace byte after maxval
  std::vector<std::uint8_t> raw(w * h * channels);
  f.read(reinterpret_cast<char*>(raw.data()),
         static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(f.gcount()) != raw.size()) {
    throw DataError("truncated pixel data in " + path);
  }
  Image img = make_image(channels, h, w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < channels; ++c) {
        img.at(c, y, x) =
            static_cast<double>(raw[(y * w + x) * channels + c]) / 255.0;
      }
    }
  }
  return img;
}

std::string join(const std::string& root, const std::string& rel) {
  return (fs::path(root) / rel).string();
}

std::string scene_image_name(std::size_t i) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "images/scene_%05zu.ppm", i);
  return buf;
}

std::string scene_mask_name(std::size_t i, std::size_t k) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "masks/scene_%05zu_inst_%zu.pgm", i, k);
  return buf;
}

std::string sketch_name(char style, std::size_t class_id, const char* split,
                        std::size_t i) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "sketches/%c/class_%zu_%s_%04zu.pgm", style,
                class_id, split, i);
  return buf;
}

ordered_json split_json(const ClassSplit& cs) {
  return ordered_json{{"query_vocab", cs.query_vocab},
                      {"sketch_vocab", cs.sketch_vocab},
                      {"shared", cs.shared},
                      {"query_only", cs.query_only},
                      {"sketch_only", cs.sketch_only}};
}

ordered_json manifest_to_json(const DatasetManifest& m) {
  ordered_json j;
  j["version"] = m.version;
  j["image_size"] = m.image_size;
  j["sketch_size"] = m.sketch_size;
  j["styles"] = {"A", "B"};
  j["vocabularies"] =
      ordered_json{{"A", m.style_a_vocab}, {"B", m.style_b_vocab}};
  j["class_split"] = split_json(m.split());
  ordered_json scenes = ordered_json::array();
  for (const SceneRecord& s : m.scenes) {
    ordered_json anns = ordered_json::array();
    for (const AnnotationRecord& a : s.annotations) {
      anns.push_back(ordered_json{
          {"class", a.class_id},
          {"box", {a.box.cx, a.box.cy, a.box.w, a.box.h}},
          {"mask", a.mask_path}});
    }
    scenes.push_back(
        ordered_json{{"image", s.image_path}, {"annotations", anns}});
  }
  j["scenes"] = std::move(scenes);
  ordered_json sketches = ordered_json::array();
  for (const SketchRecord& s : m.sketches) {
    sketches.push_back(ordered_json{{"style", std::string(1, s.style)},
                                    {"class", s.class_id},
                                    {"seed", s.seed},
                                    {"path", s.path}});
  }
  j["sketches"] = std::move(sketches);
  j["splits"] = ordered_json{
      {"A",
       ordered_json{{"train", m.train_split_a}, {"test", m.test_split_a}}},
      {"B",
       ordered_json{{"train", m.train_split_b}, {"test", m.test_split_b}}}};
  return j;
}

DatasetManifest manifest_from_json(const ordered_json& j,
                                   const std::string& root) {
  DatasetManifest m;
  m.root = root;
  m.version = j.at("version").get<std::size_t>();
  if (m.version != 1) {
    throw DataError("unsupported manifest version " +
                    std::to_string(m.version));
  }
  m.image_size = j.at("image_size").get<std::size_t>();
  m.sketch_size = j.at("sketch_size").get<std::size_t>();
  m.style_a_vocab =
      j.at("vocabularies").at("A").get<std::vector<std::size_t>>();
  m.style_b_vocab =
      j.at("vocabularies").at("B").get<std::vector<std::size_t>>();
  for (const ordered_json& s : j.at("scenes")) {
    SceneRecord rec;
    rec.image_path = s.at("image").get<std::string>();
    for (const ordered_json& a : s.at("annotations")) {
      AnnotationRecord ar;
      ar.class_id = a.at("class").get<std::size_t>();
      const ordered_json& b = a.at("box");
      if (!b.is_array() || b.size() != 4) {
        throw DataError("manifest: bad box record");
      }
      ar.box = BoxC{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(),
                    b[3].get<double>()};
      ar.mask_path = a.at("mask").get<std::string>();
      rec.annotations.push_back(std::move(ar));
    }
    m.scenes.push_back(std::move(rec));
  }
  for (const ordered_json& s : j.at("sketches")) {
    SketchRecord rec;
    std::string style = s.at("style").get<std::string>();
    if (style.size() != 1) throw DataError("manifest: bad style record");
    rec.style = style[0];
    rec.class_id = s.at("class").get<std::size_t>();
    rec.seed = s.at("seed").get<std::uint64_t>();
    rec.path = s.at("path").get<std::string>();
    m.sketches.push_back(std::move(rec));
  }
  const ordered_json& sp = j.at("splits");
  m.train_split_a = sp.at("A").at("train").get<std::vector<std::size_t>>();
  m.test_split_a = sp.at("A").at("test").get<std::vector<std::size_t>>();
  m.train_split_b = sp.at("B").at("train").get<std::vector<std::size_t>>();
  m.test_split_b = sp.at("B").at("test").get<std::vector<std::size_t>>();

  // The stored class split is redundant; reject manifests where it
  // disagrees with the vocabularies.
  if (j.at("class_split") != split_json(m.split())) {
    throw DataError("manifest: class_split disagrees with vocabularies");
  }
  return m;
}

void validate_split(const DatasetManifest& m, char style,
                    const std::vector<std::size_t>& train,
                    const std::vector<std::size_t>& test) {
  std::set<std::size_t> seen;
  for (const auto* part : {&train, &test}) {
    for (std::size_t idx : *part) {
      if (idx >= m.sketches.size()) {
        throw DataError("split index " + std::to_string(idx) +
                        " out of range");
      }
      if (m.sketches[idx].style != style) {
        throw DataError("split for style " + std::string(1, style) +
                        " references a sketch of style " +
                        std::string(1, m.sketches[idx].style));
      }
      if (!seen.insert(idx).second) {
        throw DataError("train/test splits overlap at sketch index " +
                        std::to_string(idx));
      }
    }
  }
}

void validate_manifest(const DatasetManifest& m) {
  if (m.style_a_vocab.empty() || m.style_b_vocab.empty()) {
    throw DataError("manifest: empty vocabulary");
  }
  for (const SceneRecord& s : m.scenes) {
    std::string p = join(m.root, s.image_path);
    if (!fs::exists(p)) throw DataError("missing file: " + p);
    for (const AnnotationRecord& a : s.annotations) {
      if (a.class_id >= kNumShapeClasses) {
        throw DataError("manifest: bad class id " +
                        std::to_string(a.class_id));
      }
      if (!(a.box.w > 0.0) || !(a.box.h > 0.0)) {
        throw DataError("manifest: degenerate box");
      }
      std::string mp = join(m.root, a.mask_path);
      if (!fs::exists(mp)) throw DataError("missing file: " + mp);
    }
  }
  for (const SketchRecord& s : m.sketches) {
    std::string p = join(m.root, s.path);
    if (!fs::exists(p)) throw DataError("missing file: " + p);
  }
  validate_split(m, 'A', m.train_split_a, m.test_split_a);
  validate_split(m, 'B', m.train_split_b, m.test_split_b);
}

}  // namespace

void write_ppm(const std::string& path, const Image& img) {
  if (img.channels != 3) throw DataError("write_ppm: image must have 3 channels");
  write_pnm(path, "P6", img);
}

Image read_ppm(const std::string& path) { return read_pnm(path, "P6", 3); }

void write_pgm(const std::string& path, const Image& img) {
  if (img.channels != 1) throw DataError("write_pgm: image must have 1 channel");
  write_pnm(path, "P5", img);
}

Image read_pgm(const std::string& path) { return read_pnm(path, "P5", 1); }

void write_mask_pgm(const std::string& path, const Mask& mask) {
  Image img = make_image(1, mask.height, mask.width);
  for (std::size_t i = 0; i < mask.data.size(); ++i) {
    img.data[i] = mask.data[i] ? 1.0 : 0.0;
  }
  write_pnm(path, "P5", img);
}

Mask read_mask_pgm(const std::string& path) {
  Image img = read_pnm(path, "P5", 1);
  Mask m = make_mask(img.height, img.width);
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    m.data[i] = img.data[i] >= 0.5 ? 1 : 0;
  }
  return m;
}

ClassSplit make_class_split(const std::vector<std::size_t>& query_vocab,
                            const std::vector<std::size_t>& sketch_vocab) {
  ClassSplit cs;
  cs.query_vocab = query_vocab;
  cs.sketch_vocab = sketch_vocab;
  std::sort(cs.query_vocab.begin(), cs.query_vocab.end());
  std::sort(cs.sketch_vocab.begin(), cs.sketch_vocab.end());
  std::set_intersection(cs.query_vocab.begin(), cs.query_vocab.end(),
                        cs.sketch_vocab.begin(), cs.sketch_vocab.end(),
                        std::back_inserter(cs.shared));
  std::set_difference(cs.query_vocab.begin(), cs.query_vocab.end(),
                      cs.sketch_vocab.begin(), cs.sketch_vocab.end(),
                      std::back_inserter(cs.query_only));
  std::set_difference(cs.sketch_vocab.begin(), cs.sketch_vocab.end(),
                      cs.query_vocab.begin(), cs.query_vocab.end(),
                      std::back_inserter(cs.sketch_only));
  return cs;
}

DatasetManifest build_dataset(const std::string& root,
                              const DatasetConfig& cfg, std::uint64_t seed) {
  fs::create_directories(join(root, "images"));
  fs::create_directories(join(root, "masks"));
  fs::create_directories(join(root, "sketches/A"));
  fs::create_directories(join(root, "sketches/B"));

  DatasetManifest m;
  m.root = root;
  m.image_size = cfg.image_size;
  m.sketch_size = cfg.sketch_size;
  m.style_a_vocab = cfg.style_a_vocab;
  m.style_b_vocab = cfg.style_b_vocab;

  SceneGenConfig scene_cfg = cfg.scene;
  scene_cfg.image_size = cfg.image_size;

  // Every item gets its own generator derived from (seed, item id), so the
  // result is independent of generation order.
  Rng master(seed);
  for (std::size_t i = 0; i < cfg.num_scenes; ++i) {
    Rng item = master.derive(0x5ce4e500000000ull + i);
    SceneSpec spec = sample_scene(item, scene_cfg);
    spec.seed = seed ^ i;
    RenderedScene rs = render_scene(spec);
    SceneRecord rec;
    rec.image_path = scene_image_name(i);
    write_ppm(join(root, rec.image_path), rs.image);
    for (std::size_t k = 0; k < rs.annotations.size(); ++k) {
      AnnotationRecord ar;
      ar.class_id = rs.annotations[k].class_id;
      ar.box = rs.annotations[k].box;
      ar.mask_path = scene_mask_name(i, k);
      write_mask_pgm(join(root, ar.mask_path), rs.annotations[k].mask);
      rec.annotations.push_back(std::move(ar));
    }
    m.scenes.push_back(std::move(rec));
  }

  for (char style : {'A', 'B'}) {
    const auto& vocab = style == 'A' ? cfg.style_a_vocab : cfg.style_b_vocab;
    auto& train = style == 'A' ? m.train_split_a : m.train_split_b;
    auto& test = style == 'A' ? m.test_split_a : m.test_split_b;
    for (std::size_t class_id : vocab) {
      const std::size_t total =
          cfg.train_sketches_per_class + cfg.test_sketches_per_class;
      for (std::size_t k = 0; k < total; ++k) {
        std::uint64_t salt = 0x5e7c400000000000ull ^
                             (static_cast<std::uint64_t>(style) << 48) ^
                             (static_cast<std::uint64_t>(class_id) << 32) ^ k;
        Rng item = master.derive(salt);
        std::uint64_t sketch_seed = item.next_u64();
        SketchSample sample =
            render_sketch_seeded(class_id, style, sketch_seed,
                                 cfg.sketch_size, style_config(style), vocab);
        const bool is_train = k < cfg.train_sketches_per_class;
        SketchRecord rec;
        rec.style = style;
        rec.class_id = class_id;
        rec.seed = sketch_seed;
        rec.path = sketch_name(
            style, class_id, is_train ? "train" : "test",
            is_train ? k : k - cfg.train_sketches_per_class);
        write_pgm(join(root, rec.path), sample.raster);
        (is_train ? train : test).push_back(m.sketches.size());
        m.sketches.push_back(std::move(rec));
      }
    }
  }

  std::ofstream f(join(root, "manifest"), std::ios::binary);
  if (!f) throw DataError("cannot write manifest under " + root);
  f << manifest_to_json(m).dump(2) << "\n";
  if (!f) throw DataError("manifest write failed under " + root);
  return m;
}

DatasetManifest load_dataset(const std::string& root) {
  std::string path = join(root, "manifest");
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  ordered_json j;
  try {
    j = ordered_json::parse(ss.str());
  } catch (const std::exception& e) {
    throw DataError("manifest parse error: " + std::string(e.what()));
  }
  DatasetManifest m;
  try {
    m = manifest_from_json(j, root);
  } catch (const DataError&) {
    throw;
  } catch (const std::exception& e) {
    throw DataError("manifest field error: " + std::string(e.what()));
  }
  validate_manifest(m);
  return m;
}

Image load_scene_image(const DatasetManifest& m, std::size_t scene_idx) {
  if (scene_idx >= m.scenes.size()) {
    throw DataError("scene index out of range");
  }
  return read_ppm(join(m.root, m.scenes[scene_idx].image_path));
}

Mask load_annotation_mask(const DatasetManifest& m, std::size_t scene_idx,
                          std::size_t ann_idx) {
  if (scene_idx >= m.scenes.size() ||
      ann_idx >= m.scenes[scene_idx].annotations.size()) {
    throw DataError("annotation index out of range");
  }
  return read_mask_pgm(
      join(m.root, m.scenes[scene_idx].annotations[ann_idx].mask_path));
}

Image load_sketch_raster(const DatasetManifest& m, std::size_t sketch_idx) {
  if (sketch_idx >= m.sketches.size()) {
    throw DataError("sketch index out of range");
  }
  return read_pgm(join(m.root, m.sketches[sketch_idx].path));
}

}  // namespace sgol
