"""Physical constants shared across the simulator (SI units)."""

# Spherical Earth model used for ground stations and occlusion geometry.
EARTH_RADIUS_M = 6_371_000.0

# Standard gravitational parameter of Earth (m^3/s^2).
MU_EARTH = 3.986004418e14

# Earth rotation rate (rad/s).
EARTH_ROTATION_RATE = 7.2921159e-5

# Speed of light in vacuum (m/s).
SPEED_OF_LIGHT = 299_792_458.0

# J2 zonal harmonic and the equatorial radius it is referenced to.
J2_EARTH = 1.08262668e-3
EARTH_RADIUS_EQUATORIAL_M = 6_378_137.0

SECONDS_PER_DAY = 86_400.0
