#pragma once

namespace qdcascade::constants {

// Working units: energies in ueV, times in ps, rates in 1/ps.
inline constexpr double kHbarUevPs = 658.2119569;  // ueV * ps
inline constexpr double kHcEvNm = 1239.8420;       // eV * nm
inline constexpr double kPi = 3.14159265358979323846;

// SI values, used only by the radiative lifetime estimate.
namespace si {
inline constexpr double kElectronCharge = 1.602176634e-19;     // C
inline constexpr double kElectronMass = 9.1093837015e-31;      // kg
inline constexpr double kSpeedOfLight = 299792458.0;           // m/s
inline constexpr double kVacuumPermittivity = 8.8541878128e-12;  // F/m
inline constexpr double kHbar = 1.054571817e-34;               // J*s
}  // namespace si

}  // namespace qdcascade::constants
