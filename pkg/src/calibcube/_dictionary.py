"""4x4-bit marker dictionary (50 codes). Generated by tools/gen_dictionary.py."""

MIN_DISTANCE = 4
BITS = 4
CODES = (
    0xB7F0,
    0x47C5,
    0x3796,
    0xF509,
    0xC23A,
    0x262A,
    0x0CB5,
    0x48DE,
    0xD980,
    0xB836,
    0x841B,
    0x2925,
    0xAA29,
    0x73D0,
    0xC11F,
    0x5B27,
    0x5F93,
    0x4B7B,
    0x00EE,
    0x72AA,
    0xFAA4,
    0x28A8,
    0xEE00,
    0x49A1,
    0xF00C,
    0xC95C,
    0x9D7C,
    0x736E,
    0x877D,
    0x525D,
    0x1CD6,
    0xC1CB,
    0x6D49,
    0xDF01,
    0x06FA,
    0xF682,
    0x55C0,
    0x1B48,
    0x8B90,
    0x9DA1,
    0xFB4D,
    0x6BDA,
    0xD5D9,
    0xE227,
    0xA12A,
    0xEFC1,
    0x9AE8,
    0x9AD4,
    0x11FF,
    0xD406,
)
