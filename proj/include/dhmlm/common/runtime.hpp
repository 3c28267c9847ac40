#pragma once

namespace dhmlm {

/// Keeps large freed blocks in the heap instead of returning them to the OS,
/// so per-step activation buffers do not page-fault on every allocation.
void tune_allocator();

}  // namespace dhmlm
