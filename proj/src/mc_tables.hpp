#pragma once

namespace nuiworld::geo::detail {

// Cell corner offsets:
// 0:(0,0,0) 1:(1,0,0) 2:(1,1,0) 3:(0,1,0) 4:(0,0,1) 5:(1,0,1) 6:(1,1,1) 7:(0,1,1).
extern const int kEdgeTable[256];
extern const int kTriTable[256][16];

}  // namespace nuiworld::geo::detail
