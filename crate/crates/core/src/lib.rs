pub mod dubins2d;
pub mod dubins3d;
pub mod numerics;
pub mod p2;
pub mod reach;
pub mod rootfind;
pub mod vdp;
