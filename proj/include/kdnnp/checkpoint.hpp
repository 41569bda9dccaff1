#pragma once

// Model checkpoint layout (all integers little-endian):
//   8 bytes  magic "KDNNPCKP"
//   u32      format version
//   u32      header length H
//   H bytes  header text, "key=value" lines (specs, normalisation, shifts)
//   u64      parameter count P
//   P x f64  flat parameter vector, IEEE-754 little-endian
//   u64      FNV-1a 64 checksum of every preceding byte

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "kdnnp/format.hpp"
#include "kdnnp/model.hpp"

namespace kdnnp {

inline constexpr char checkpoint_magic[8] = {'K', 'D', 'N', 'N', 'P', 'C', 'K', 'P'};
inline constexpr std::uint32_t checkpoint_version = 1;

namespace detail {

inline void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
    for (int k = 0; k < 8; ++k) out.push_back(static_cast<unsigned char>(v >> (8 * k)));
}
inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int k = 0; k < 4; ++k) out.push_back(static_cast<unsigned char>(v >> (8 * k)));
}
inline std::uint64_t get_uint(const std::vector<unsigned char>& in, std::size_t& pos, int bytes) {
    if (pos + static_cast<std::size_t>(bytes) > in.size()) throw Error(ErrorKind::Format, "checkpoint truncated");
    std::uint64_t v = 0;
    for (int k = 0; k < bytes; ++k) v |= static_cast<std::uint64_t>(in[pos + static_cast<std::size_t>(k)]) << (8 * k);
    pos += static_cast<std::size_t>(bytes);
    return v;
}

template <class T, class F>
std::string join(const std::vector<T>& values, F&& fmt) {
    std::string s;
    for (std::size_t k = 0; k < values.size(); ++k) {
        if (k) s += ',';
        s += fmt(values[k]);
    }
    return s;
}

inline std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    if (s.empty()) return out;
    std::size_t start = 0;
    while (true) {
        const auto c = s.find(',', start);
        out.push_back(s.substr(start, c == std::string::npos ? std::string::npos : c - start));
        if (c == std::string::npos) break;
        start = c + 1;
    }
    return out;
}

inline std::vector<double> parse_doubles(const std::string& s) {
    std::vector<double> out;
    for (const auto& t : split_commas(s)) out.push_back(parse_double(t));
    return out;
}

inline std::vector<std::size_t> parse_sizes(const std::string& s) {
    std::vector<std::size_t> out;
    for (const auto& t : split_commas(s)) out.push_back(static_cast<std::size_t>(parse_int(t)));
    return out;
}

inline std::string checkpoint_header(const PotentialModel& m) {
    auto dbl = [](double v) { return format_double(v); };
    auto sz = [](std::size_t v) { return std::to_string(v); };
    std::vector<double> eta, rs;
    for (const auto& t : m.descriptor.radial) {
        eta.push_back(t.eta);
        rs.push_back(t.r_s);
    }
    std::ostringstream h;
    h << "species=" << join(m.species, [](const std::string& s) { return s; }) << '\n'
      << "cutoff=" << dbl(m.descriptor.cutoff) << '\n'
      << "n_species=" << m.descriptor.n_species << '\n'
      << "radial_eta=" << join(eta, dbl) << '\n'
      << "radial_rs=" << join(rs, dbl) << '\n'
      << "descriptor_layers=" << join(m.network.descriptor_layers, sz) << '\n'
      << "fitting_layers=" << join(m.network.fitting_layers, sz) << '\n'
      << "activation=" << m.network.activation << '\n'
      << "residual=" << (m.network.residual_connections ? 1 : 0) << '\n'
      << "init_seed=" << m.init_seed << '\n'
      << "feature_mean=" << join(m.feature_mean, dbl) << '\n'
      << "feature_inv_std=" << join(m.feature_inv_std, dbl) << '\n'
      << "energy_shift=" << join(m.energy_shift, dbl) << '\n';
    return h.str();
}

} // namespace detail

inline std::vector<unsigned char> serialize_checkpoint(const PotentialModel& m) {
    std::vector<unsigned char> out(std::begin(checkpoint_magic), std::end(checkpoint_magic));
    detail::put_u32(out, checkpoint_version);
    const std::string header = detail::checkpoint_header(m);
    detail::put_u32(out, static_cast<std::uint32_t>(header.size()));
    out.insert(out.end(), header.begin(), header.end());
    detail::put_u64(out, m.weights.size());
    for (double w : m.weights) detail::put_u64(out, std::bit_cast<std::uint64_t>(w));
    detail::put_u64(out, fnv1a64(out));
    return out;
}

inline PotentialModel deserialize_checkpoint(const std::vector<unsigned char>& in) {
    if (in.size() < 8 + 4 + 4 + 8 + 8 || std::memcmp(in.data(), checkpoint_magic, 8) != 0)
        throw Error(ErrorKind::Format, "not a model checkpoint");
    std::size_t pos = 8;
    const auto version = detail::get_uint(in, pos, 4);
    if (version != checkpoint_version)
        throw Error(ErrorKind::Format, "unsupported checkpoint version " + std::to_string(version));
    const auto header_len = static_cast<std::size_t>(detail::get_uint(in, pos, 4));
    if (pos + header_len > in.size()) throw Error(ErrorKind::Format, "checkpoint truncated");
    const std::string header(in.begin() + static_cast<std::ptrdiff_t>(pos),
                             in.begin() + static_cast<std::ptrdiff_t>(pos + header_len));
    pos += header_len;
    const auto count = static_cast<std::size_t>(detail::get_uint(in, pos, 8));
    if (pos + count * 8 + 8 != in.size()) throw Error(ErrorKind::Format, "checkpoint length mismatch");
    std::vector<double> weights(count);
    for (auto& w : weights) w = std::bit_cast<double>(detail::get_uint(in, pos, 8));
    const std::size_t body = pos;
    const auto checksum = detail::get_uint(in, pos, 8);
    if (checksum != fnv1a64(std::span(in.data(), body))) throw Error(ErrorKind::Format, "checkpoint checksum mismatch");

    std::map<std::string, std::string> kv;
    std::istringstream hs(header);
    for (std::string line; std::getline(hs, line);) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw Error(ErrorKind::Format, "bad checkpoint header line");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    auto get = [&](const std::string& k) -> const std::string& {
        auto it = kv.find(k);
        if (it == kv.end()) throw Error(ErrorKind::Format, "checkpoint header missing '" + k + "'");
        return it->second;
    };
    PotentialModel m;
    m.species = detail::split_commas(get("species"));
    m.descriptor.cutoff = parse_double(get("cutoff"));
    m.descriptor.n_species = static_cast<std::size_t>(parse_int(get("n_species")));
    const auto eta = detail::parse_doubles(get("radial_eta"));
    const auto rs = detail::parse_doubles(get("radial_rs"));
    if (eta.size() != rs.size()) throw Error(ErrorKind::Format, "radial grid lengths differ");
    for (std::size_t k = 0; k < eta.size(); ++k) m.descriptor.radial.push_back({eta[k], rs[k]});
    m.network.descriptor_layers = detail::parse_sizes(get("descriptor_layers"));
    m.network.fitting_layers = detail::parse_sizes(get("fitting_layers"));
    m.network.activation = get("activation");
    m.network.residual_connections = get("residual") == "1";
    m.init_seed = static_cast<std::uint64_t>(std::stoull(get("init_seed")));
    m.feature_mean = detail::parse_doubles(get("feature_mean"));
    m.feature_inv_std = detail::parse_doubles(get("feature_inv_std"));
    m.energy_shift = detail::parse_doubles(get("energy_shift"));
    m.weights = std::move(weights);
    finalize_layout(m);
    if (m.feature_mean.size() != m.descriptor.feature_dim() || m.feature_inv_std.size() != m.descriptor.feature_dim() ||
        m.energy_shift.size() != m.species.size())
        throw Error(ErrorKind::Format, "checkpoint normalisation sizes inconsistent");
    return m;
}

inline void save_checkpoint(const std::filesystem::path& path, const PotentialModel& m) {
    const auto bytes = serialize_checkpoint(m);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "' for writing");
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw Error(ErrorKind::Io, "write failed for '" + path.string() + "'");
}

inline std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline PotentialModel load_checkpoint(const std::filesystem::path& path) {
    return deserialize_checkpoint(read_bytes(path));
}

} // namespace kdnnp
