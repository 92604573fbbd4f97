#pragma once

// The float and double builds live in distinct inline namespaces so both
// can be linked into one program.
#ifdef COLORBRIDGE_DOUBLE
#define COLORBRIDGE_ABI f64
#else
#define COLORBRIDGE_ABI f32
#endif
