import { ApiClient } from "./api.js";
import { ChatViewModel } from "./model.js";
import { renderApp, update } from "./view.js";

const root = document.getElementById("app") as HTMLElement;
const params = new URLSearchParams(window.location.search);
const spec = params.get("spec") ?? "restaurant";

const vm = new ChatViewModel(new ApiClient(""));
vm.onChange = () => update(root, vm);
renderApp(root, vm, (text) => void vm.send(text));
void vm.start(spec);
