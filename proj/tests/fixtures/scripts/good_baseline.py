import json

with open("input.geojson") as f:
    data = json.load(f)

for feature in data["features"]:
    props = feature["properties"]
    if props["type"] == "ag_plot":
        y = props.get("yield", 0.0)
        props["margin_intervention"] = 0.5 if y < 3.0 else 0.0
        props["habitat_conversion"] = 0.25 if y < 2.0 else 0.0
    else:
        props["margin_intervention"] = 0.0
        props["habitat_conversion"] = 0.0

with open("output.geojson", "w") as f:
    json.dump(data, f)
