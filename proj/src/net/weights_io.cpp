// Weight files: "NBVW", u32 version, architecture name, u32 tensor count, then
// per tensor u32 rank, u32 dims and float32 values; a CRC32 closes the file.

#include <sstream>

#include "../binary_io.hpp"
#include "nbv/error.hpp"
#include "nbv/nbvnet.hpp"

namespace nbv::net {

namespace {

constexpr std::string_view kMagic = "NBVW";

struct StoredTensor {
  Shape shape;
  std::vector<float> values;
};

struct WeightFile {
  std::string name;
  std::vector<StoredTensor> tensors;
};

WeightFile read_file(const std::filesystem::path& path) {
  io::Reader in = io::Reader::open(path);
  if (!in.tag(kMagic)) {
    throw Error(Errc::FormatVersionMismatch, path.string() + " is not a weight file");
  }
  const std::uint32_t version = in.u32();
  if (version != kWeightFormatVersion) {
    throw Error(Errc::FormatVersionMismatch,
                path.string() + ": weight format version " + std::to_string(version) +
                    ", expected " + std::to_string(kWeightFormatVersion));
  }
  WeightFile f;
  f.name = in.str();
  const std::uint32_t count = in.u32();
  for (std::uint32_t t = 0; t < count; ++t) {
    StoredTensor st;
    const std::uint32_t rank = in.u32();
    if (rank > 8) throw Error(Errc::IoError, path.string() + ": implausible tensor rank");
    std::size_t n = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      st.shape.push_back(in.u32());
      n *= st.shape.back();
    }
    in.need(n * 4);
    st.values.resize(n);
    for (auto& v : st.values) v = in.f32();
    f.tensors.push_back(std::move(st));
  }
  in.finish();
  return f;
}

void assign(NbvNet& net, const WeightFile& f, const std::string& source) {
  auto params = net.parameters();
  if (params.size() != f.tensors.size()) {
    throw Error(Errc::ShapeMismatch, source + " holds " + std::to_string(f.tensors.size()) +
                                         " tensors, the network has " +
                                         std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape != f.tensors[i].shape) {
      throw Error(Errc::ShapeMismatch, source + ": tensor " + std::to_string(i) + " is " +
                                           shape_string(f.tensors[i].shape) + ", expected " +
                                           shape_string(params[i]->shape));
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& src = f.tensors[i].values;
    std::copy(src.begin(), src.end(), params[i]->value.begin());
  }
}

}  // namespace

void save_weights(const NbvNet& net, const std::filesystem::path& path) {
  io::Writer out;
  out.tag(kMagic);
  out.u32(kWeightFormatVersion);
  out.str(net.name());
  const auto params = net.parameters();
  out.u32(static_cast<std::uint32_t>(params.size()));
  for (const Parameter* p : params) {
    out.u32(static_cast<std::uint32_t>(p->shape.size()));
    for (std::size_t d : p->shape) out.u32(static_cast<std::uint32_t>(d));
    for (double v : p->value) out.f32(static_cast<float>(v));
  }
  out.commit(path);
}

NbvNet load_weights(const std::filesystem::path& path) {
  const WeightFile f = read_file(path);
  if (f.tensors.empty() || f.tensors.back().shape.size() != 1) {
    throw Error(Errc::ShapeMismatch, path.string() + " does not end in an output bias");
  }
  // "<variant>[;in=N][;w=S][;drop=D]"
  std::string base;
  VariantOptions opt;
  DropoutStart drop = DropoutStart::None;
  std::istringstream parts(f.name);
  std::string part;
  bool first = true;
  while (std::getline(parts, part, ';')) {
    if (first) {
      base = part;
      first = false;
      continue;
    }
    const auto eq = part.find('=');
    const std::string key = part.substr(0, eq);
    const std::string val = eq == std::string::npos ? "" : part.substr(eq + 1);
    try {
      if (key == "in") {
        opt.input_side = std::stoul(val);
      } else if (key == "w") {
        opt.width_scale = std::stod(val);
      } else if (key == "drop") {
        drop = parse_dropout_start(val);
      } else {
        throw Error(Errc::UnknownVariant, "unknown architecture option '" + part + "'");
      }
    } catch (const std::logic_error&) {
      throw Error(Errc::UnknownVariant, "malformed architecture option '" + part + "'");
    }
  }
  NbvNet net = build_variant(base, f.tensors.back().shape[0], drop, 0, opt);
  assign(net, f, path.string());
  return net;
}

void load_weights_into(NbvNet& net, const std::filesystem::path& path) {
  assign(net, read_file(path), path.string());
}

}  // namespace nbv::net
