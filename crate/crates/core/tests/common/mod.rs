pub mod ddpg_ref;
