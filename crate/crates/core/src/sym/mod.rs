//! Symbolic values, the input-state constructor and per-path machine state.

pub mod expr;
pub mod layout;
pub mod state;

pub use expr::{BinOp, CmpOp, Field, Kind, Origin, SymExpr};
pub use layout::InputLayout;
pub use state::{
    init_state, init_state_with, AccountJournal, CallFrame, CapExceeded, MachineState,
};
