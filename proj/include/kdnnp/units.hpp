#pragma once

// Unit system: length Å, time fs, energy eV, mass amu, temperature K.

namespace kdnnp::units {

inline constexpr double boltzmann = 8.617333262e-5;          // eV/K
inline constexpr double electron_volt_joule = 1.602176634e-19;
inline constexpr double amu_kg = 1.66053906660e-27;
inline constexpr double amu_gram = amu_kg * 1e3;
inline constexpr double cubic_angstrom_cm3 = 1e-24;

// (eV/Å)/amu expressed in Å/fs².
inline constexpr double force_to_acceleration = electron_volt_joule / (1e-10 * amu_kg) * 1e10 / 1e30;

// Å²/fs to cm²/s.
inline constexpr double diffusion_angstrom2_per_fs_to_cm2_per_s = 1e-16 / 1e-15;

} // namespace kdnnp::units
