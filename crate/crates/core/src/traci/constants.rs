//! Command, variable and type identifiers from the public TraCI protocol
//! description. Everything the bridge puts on the wire is named here.

// commands
pub const CMD_GETVERSION: u8 = 0x00;
pub const CMD_SIMSTEP: u8 = 0x02;
pub const CMD_CLOSE: u8 = 0x7f;

pub const CMD_GET_TL_VARIABLE: u8 = 0xa2;
pub const RESPONSE_GET_TL_VARIABLE: u8 = 0xb2;
pub const CMD_GET_VEHICLE_VARIABLE: u8 = 0xa4;
pub const RESPONSE_GET_VEHICLE_VARIABLE: u8 = 0xb4;
pub const CMD_GET_SIM_VARIABLE: u8 = 0xab;
pub const RESPONSE_GET_SIM_VARIABLE: u8 = 0xbb;

// result codes
pub const RTYPE_OK: u8 = 0x00;
pub const RTYPE_NOTIMPLEMENTED: u8 = 0x01;
pub const RTYPE_ERR: u8 = 0xff;

// value type tags
pub const POSITION_2D: u8 = 0x01;
pub const TYPE_UBYTE: u8 = 0x07;
pub const TYPE_INTEGER: u8 = 0x09;
pub const TYPE_DOUBLE: u8 = 0x0b;
pub const TYPE_STRING: u8 = 0x0c;
pub const TYPE_STRINGLIST: u8 = 0x0e;
pub const TYPE_COMPOUND: u8 = 0x0f;
pub const TYPE_COLOR: u8 = 0x11;

// generic
pub const ID_LIST: u8 = 0x00;

// vehicle variables
pub const VAR_SPEED: u8 = 0x40;
pub const VAR_POSITION: u8 = 0x42;
pub const VAR_ANGLE: u8 = 0x43;
pub const VAR_TYPE: u8 = 0x4f;
pub const VAR_ACCELERATION: u8 = 0x72;

// traffic light variables
pub const TL_RED_YELLOW_GREEN_STATE: u8 = 0x20;

// simulation variables
pub const VAR_TIME: u8 = 0x66;
pub const VAR_DEPARTED_VEHICLES_IDS: u8 = 0x74;
pub const VAR_ARRIVED_VEHICLES_IDS: u8 = 0x7a;
pub const VAR_DELTA_T: u8 = 0x7b;

/// Oldest API level whose simulation step takes a time in seconds as a double.
pub const MIN_API_VERSION: i32 = 20;
/// API level reported by current stable SUMO releases.
pub const CURRENT_API_VERSION: i32 = 21;
