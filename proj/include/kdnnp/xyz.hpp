#pragma once

// Extended-XYZ-style frame files.
//
//   line 1: atom count
//   line 2: cell="a b c" energy=E provenance=P temperature_tag=T time=t
//           species="Ar ..." masses="39.948 ..." properties=P
//   atoms : symbol x y z fx fy fz [vx vy vz ix iy iz]
//
// `properties` is "species:pos:forces" or "species:pos:forces:velocities:images".
// Every float is written as the shortest round-trip decimal.

#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "kdnnp/dataset.hpp"
#include "kdnnp/format.hpp"

namespace kdnnp::xyz {

inline constexpr std::string_view basic_properties = "species:pos:forces";
inline constexpr std::string_view trajectory_properties = "species:pos:forces:velocities:images";

inline void write_frame(std::ostream& os, const LabeledFrame& f, bool with_dynamics = false) {
    const auto& s = f.system;
    os << s.size() << '\n';
    os << "cell=\"" << format_double(s.cell.x) << ' ' << format_double(s.cell.y) << ' ' << format_double(s.cell.z)
       << "\" energy=" << format_double(f.energy) << " provenance=" << to_string(f.provenance)
       << " temperature_tag=" << format_double(f.temperature_tag) << " time=" << format_double(f.time)
       << " species=\"";
    for (std::size_t k = 0; k < s.kinds.size(); ++k) os << (k ? " " : "") << s.kinds[k].symbol;
    os << "\" masses=\"";
    for (std::size_t k = 0; k < s.kinds.size(); ++k) os << (k ? " " : "") << format_double(s.kinds[k].mass);
    os << "\" properties=" << (with_dynamics ? trajectory_properties : basic_properties) << '\n';
    for (std::size_t i = 0; i < s.size(); ++i) {
        const auto& p = s.positions[i];
        const auto& F = f.forces[i];
        os << s.kinds[static_cast<std::size_t>(s.species[i])].symbol << ' ' << format_double(p.x) << ' '
           << format_double(p.y) << ' ' << format_double(p.z) << ' ' << format_double(F.x) << ' '
           << format_double(F.y) << ' ' << format_double(F.z);
        if (with_dynamics) {
            const auto& v = s.velocities[i];
            const auto& img = s.images[i];
            os << ' ' << format_double(v.x) << ' ' << format_double(v.y) << ' ' << format_double(v.z) << ' ' << img[0]
               << ' ' << img[1] << ' ' << img[2];
        }
        os << '\n';
    }
}

namespace detail {

inline std::map<std::string, std::string> parse_header(const std::string& line, std::size_t line_no) {
    std::map<std::string, std::string> out;
    std::size_t pos = 0;
    while (pos < line.size()) {
        while (pos < line.size() && line[pos] == ' ') ++pos;
        if (pos >= line.size()) break;
        const auto eq = line.find('=', pos);
        if (eq == std::string::npos)
            throw Error(ErrorKind::Format, "header token without '=' at line " + std::to_string(line_no),
                        static_cast<std::int64_t>(line_no));
        std::string key = line.substr(pos, eq - pos);
        std::string value;
        pos = eq + 1;
        if (pos < line.size() && line[pos] == '"') {
            const auto close = line.find('"', pos + 1);
            if (close == std::string::npos)
                throw Error(ErrorKind::Format, "unterminated quote at line " + std::to_string(line_no),
                            static_cast<std::int64_t>(line_no));
            value = line.substr(pos + 1, close - pos - 1);
            pos = close + 1;
        } else {
            const auto end = line.find(' ', pos);
            value = line.substr(pos, end == std::string::npos ? std::string::npos : end - pos);
            pos = end == std::string::npos ? line.size() : end;
        }
        out[key] = value;
    }
    return out;
}

inline std::vector<std::string> split_ws(const std::string& s) {
    std::istringstream is(s);
    std::vector<std::string> out;
    for (std::string tok; is >> tok;) out.push_back(tok);
    return out;
}

inline const std::string& require(const std::map<std::string, std::string>& h, const std::string& key,
                                  std::size_t line_no) {
    auto it = h.find(key);
    if (it == h.end())
        throw Error(ErrorKind::Format, "header missing '" + key + "' at line " + std::to_string(line_no),
                    static_cast<std::int64_t>(line_no));
    return it->second;
}

} // namespace detail

/// Reads every frame in the stream.
inline std::vector<LabeledFrame> read_frames(std::istream& is) {
    std::vector<LabeledFrame> frames;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto n = static_cast<std::size_t>(parse_int(trim(line)));
        if (!std::getline(is, line)) throw Error(ErrorKind::Format, "truncated frame header");
        ++line_no;
        const auto header = detail::parse_header(line, line_no);

        LabeledFrame f;
        const auto cell = detail::split_ws(detail::require(header, "cell", line_no));
        if (cell.size() != 3) throw Error(ErrorKind::Format, "cell needs three lengths", static_cast<std::int64_t>(line_no));
        f.system.cell = {parse_double(cell[0]), parse_double(cell[1]), parse_double(cell[2])};
        f.energy = parse_double(detail::require(header, "energy", line_no));
        f.provenance = parse_provenance(detail::require(header, "provenance", line_no));
        f.temperature_tag = parse_double(detail::require(header, "temperature_tag", line_no));
        if (auto it = header.find("time"); it != header.end()) f.time = parse_double(it->second);

        const auto symbols = detail::split_ws(detail::require(header, "species", line_no));
        const auto masses = detail::split_ws(detail::require(header, "masses", line_no));
        if (symbols.size() != masses.size())
            throw Error(ErrorKind::Format, "species and masses lengths differ", static_cast<std::int64_t>(line_no));
        for (std::size_t k = 0; k < symbols.size(); ++k) f.system.kinds.push_back({symbols[k], parse_double(masses[k])});

        const std::string props = detail::require(header, "properties", line_no);
        const bool dynamics = props == trajectory_properties;
        if (!dynamics && props != basic_properties)
            throw Error(ErrorKind::Format, "unsupported properties '" + props + "'", static_cast<std::int64_t>(line_no));

        for (std::size_t i = 0; i < n; ++i) {
            if (!std::getline(is, line)) throw Error(ErrorKind::Format, "truncated atom block");
            ++line_no;
            const auto tok = detail::split_ws(line);
            if (tok.size() != (dynamics ? 13u : 7u))
                throw Error(ErrorKind::Format, "wrong column count at line " + std::to_string(line_no),
                            static_cast<std::int64_t>(line_no));
            int sp = -1;
            for (std::size_t k = 0; k < symbols.size(); ++k)
                if (symbols[k] == tok[0]) sp = static_cast<int>(k);
            if (sp < 0) throw Error(ErrorKind::UnknownSpecies, "atom species '" + tok[0] + "' not in header");
            f.system.species.push_back(sp);
            f.system.positions.push_back({parse_double(tok[1]), parse_double(tok[2]), parse_double(tok[3])});
            f.forces.push_back({parse_double(tok[4]), parse_double(tok[5]), parse_double(tok[6])});
            if (dynamics) {
                f.system.velocities.push_back({parse_double(tok[7]), parse_double(tok[8]), parse_double(tok[9])});
                f.system.images.push_back({parse_int(tok[10]), parse_int(tok[11]), parse_int(tok[12])});
            } else {
                f.system.velocities.push_back({});
                f.system.images.push_back({0, 0, 0});
            }
        }
        validate(f.system);
        frames.push_back(std::move(f));
    }
    return frames;
}

inline void write_file(const std::filesystem::path& path, std::span<const LabeledFrame> frames,
                       bool with_dynamics = false) {
    std::ofstream os(path);
    if (!os) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "' for writing");
    for (const auto& f : frames) write_frame(os, f, with_dynamics);
    if (!os) throw Error(ErrorKind::Io, "write failed for '" + path.string() + "'");
}

inline std::vector<LabeledFrame> read_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "'");
    return read_frames(is);
}

} // namespace kdnnp::xyz
