export * from "./api.js";
export * from "./state.js";
export * from "./render.js";
export * from "./session.js";
