#pragma once

namespace jamba {

// Keeps large short-lived buffers (activations, gradients) on the heap instead
// of mapping and unmapping pages every step. No-op outside glibc.
void tune_allocator();

}  // namespace jamba
