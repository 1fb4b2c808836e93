#include "stconv/checkpoint.hpp"

#include "binary.hpp"
#include "json.hpp"
#include "stconv/error.hpp"

namespace stconv {

using nlohmann::json;

namespace {

constexpr std::string_view kStcvMagic = "STCV";

FormatError syntax(const std::string& what) { return FormatError(FormatError::Kind::kSyntax, what); }

std::string as_text(const std::vector<std::uint8_t>& bytes) {
  return std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

}  // namespace

std::string config_to_json(const HybridConfig& c, const StipParams& s) {
  json blocks = json::array();
  for (const auto& b : c.blocks) {
    blocks.push_back({{"out_channels", b.out_channels}, {"kt", b.kt}, {"pool", b.pool}});
  }
  json doc;
  doc["model"] = {{"num_classes", c.num_classes}, {"input", c.input},     {"blocks", blocks},
                  {"embed_dim", c.embed_dim},     {"bow_dim", c.bow_dim}, {"lr", c.lr},
                  {"beta1", c.beta1},             {"beta2", c.beta2},     {"epsilon", c.epsilon},
                  {"epochs", c.epochs},           {"batch_size", c.batch_size},
                  {"seed", c.seed}};
  doc["stip"] = {{"sigma", s.sigma},
                 {"tau", s.tau},
                 {"s", s.s},
                 {"k", s.k},
                 {"threshold_frac", s.threshold_frac},
                 {"nms_radius", s.nms_radius},
                 {"cuboid", s.cuboid},
                 {"max_points", s.max_points}};
  return doc.dump();
}

void config_from_json(std::string_view text, HybridConfig& c, StipParams& s) {
  try {
    const json doc = json::parse(text);
    const json& m = doc.at("model");
    c.num_classes = m.at("num_classes").get<std::size_t>();
    c.input = m.at("input").get<Extent3>();
    c.blocks.clear();
    for (const auto& b : m.at("blocks")) {
      c.blocks.push_back({b.at("out_channels").get<std::size_t>(), b.at("kt").get<std::size_t>(),
                          b.at("pool").get<Extent3>()});
    }
    c.embed_dim = m.at("embed_dim").get<std::size_t>();
    c.bow_dim = m.at("bow_dim").get<std::size_t>();
    c.lr = m.at("lr").get<double>();
    c.beta1 = m.at("beta1").get<double>();
    c.beta2 = m.at("beta2").get<double>();
    c.epsilon = m.at("epsilon").get<double>();
    c.epochs = m.at("epochs").get<std::size_t>();
    c.batch_size = m.at("batch_size").get<std::size_t>();
    c.seed = m.at("seed").get<std::uint64_t>();
    const json& p = doc.at("stip");
    s.sigma = p.at("sigma").get<double>();
    s.tau = p.at("tau").get<double>();
    s.s = p.at("s").get<double>();
    s.k = p.at("k").get<double>();
    s.threshold_frac = p.at("threshold_frac").get<double>();
    s.nms_radius = p.at("nms_radius").get<std::size_t>();
    s.cuboid = p.at("cuboid").get<Extent3>();
    s.max_points = p.at("max_points").get<std::size_t>();
  } catch (const json::exception& e) {
    throw syntax(std::string("config block: ") + e.what());
  }
}

std::vector<std::uint8_t> encode_checkpoint(const HybridModel& m, const StipParams& stip) {
  detail::ByteWriter w;
  w.text(kStcvMagic);
  w.u32(kStcvVersion);
  const std::string cfg = config_to_json(m.cfg, stip);
  w.u32(static_cast<std::uint32_t>(cfg.size()));
  w.text(cfg);
  const auto params = parameters(m);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    for (std::size_t e : p.shape) w.u64(e);
    for (double v : p.values) w.f64(v);
  }
  w.seal();
  return w.take();
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  const std::string what = "STCV";
  detail::check_magic(bytes, kStcvMagic, what);
  detail::ByteReader r(bytes.data(), bytes.size(), what);
  r.text(4);
  const std::uint32_t version = r.u32();
  if (version != kStcvVersion) {
    throw FormatError(FormatError::Kind::kBadVersion,
                      what + ": unsupported version " + std::to_string(version));
  }
  const std::string cfg_text = r.text(r.u32());
  const std::uint32_t count = r.u32();
  struct Blob {
    Shape5 shape;
    std::size_t offset;
  };
  std::vector<Blob> blobs;
  for (std::uint32_t i = 0; i < count; ++i) {
    Blob b{};
    for (auto& e : b.shape) e = r.u64();
    std::size_t n = 1;
    for (std::size_t e : b.shape) {
      if (e != 0 && n > r.remaining() / e) {
        throw FormatError(FormatError::Kind::kTruncated, what + ": tensor " + std::to_string(i) + " runs past the end");
      }
      n *= e;
    }
    if (n > r.remaining() / 8) {
      throw FormatError(FormatError::Kind::kTruncated, what + ": tensor " + std::to_string(i) + " runs past the end");
    }
    b.offset = r.position();
    std::vector<std::uint8_t> skip(n * 8);
    r.raw(skip.data(), skip.size());
    blobs.push_back(b);
  }
  if (r.remaining() < 4) throw FormatError(FormatError::Kind::kTruncated, what + ": missing CRC");
  if (r.remaining() > 4) throw syntax(what + ": trailing bytes after payload");
  detail::check_crc(bytes, what);

  Checkpoint ck;
  HybridConfig cfg;
  config_from_json(cfg_text, cfg, ck.stip);
  try {
    ck.model = model_init(cfg, 0);
  } catch (const ConfigError& e) {
    throw FormatError(FormatError::Kind::kShape, what + ": " + e.what());
  }
  auto params = parameters(ck.model);
  if (params.size() != count) {
    throw FormatError(FormatError::Kind::kShape, what + ": expected " + std::to_string(params.size()) +
                                                     " tensors, found " + std::to_string(count));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape != blobs[i].shape) {
      throw FormatError(FormatError::Kind::kShape, what + ": " + params[i].name + " has shape " +
                                                       to_string(blobs[i].shape) + ", config implies " +
                                                       to_string(params[i].shape));
    }
    detail::ByteReader t(bytes.data() + blobs[i].offset, params[i].values.size() * 8, what);
    for (double& v : params[i].values) v = t.f64();
  }
  return ck;
}

void save_checkpoint(const std::string& path, const HybridModel& m, const StipParams& stip) {
  detail::write_file(path, encode_checkpoint(m, stip));
}

Checkpoint load_checkpoint(const std::string& path) {
  try {
    return decode_checkpoint(detail::read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(e.kind(), path + ": " + e.what());
  }
}

std::string codebook_to_json(const Codebook& cb) {
  json centers = json::array();
  for (std::size_t i = 0; i < cb.size(); ++i) {
    json row = json::array();
    for (std::size_t j = 0; j < cb.width(); ++j) row.push_back(cb.centers(i, j));
    centers.push_back(std::move(row));
  }
  json doc = {{"k", cb.size()}, {"width", cb.width()}, {"centers", std::move(centers)}};
  return doc.dump() + "\n";
}

Codebook codebook_from_json(std::string_view text) {
  try {
    const json doc = json::parse(text);
    const std::size_t k = doc.at("k").get<std::size_t>(), d = doc.at("width").get<std::size_t>();
    const json& rows = doc.at("centers");
    if (rows.size() != k) throw syntax("codebook: expected " + std::to_string(k) + " centers");
    Codebook cb{Tensor5::matrix(k, d)};
    for (std::size_t i = 0; i < k; ++i) {
      if (rows[i].size() != d) throw syntax("codebook: center " + std::to_string(i) + " has the wrong width");
      for (std::size_t j = 0; j < d; ++j) cb.centers(i, j) = rows[i][j].get<double>();
    }
    return cb;
  } catch (const json::exception& e) {
    throw syntax(std::string("codebook: ") + e.what());
  }
}

void save_codebook(const std::string& path, const Codebook& cb) {
  const std::string text = codebook_to_json(cb);
  detail::write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

Codebook load_codebook(const std::string& path) {
  try {
    return codebook_from_json(as_text(detail::read_file(path)));
  } catch (const FormatError& e) {
    throw FormatError(e.kind(), path + ": " + e.what());
  }
}

}  // namespace stconv
